"""Greedy bounding-box non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .efd import FourierDescriptor
from .geometry import Box, bbox_of

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass
class Detection:
    score: float
    descriptor: FourierDescriptor
    contour: np.ndarray  # (S, 2) refined contour points
    box: Box = field(default=None)
    grid_index: int = 0  # row-major cell index the proposal came from

    def __post_init__(self):
        self.contour = np.asarray(self.contour, dtype=np.float64)
        if self.box is None:
            self.box = bbox_of(self.contour)
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")

    def to_dict(self) -> dict:
        return {
            "score": float(self.score),
            "descriptor": self.descriptor.to_dict(),
            "contour": self.contour.tolist(),
            "box": self.box.as_list(),
        }


def nms_order(scores, grid_index=None) -> np.ndarray:
    """Processing order: score descending, then grid index, then insertion order."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    gidx = np.zeros(n, dtype=np.int64) if grid_index is None else np.asarray(grid_index, dtype=np.int64)
    return np.lexsort((np.arange(n), gidx, -scores))


def nms_boxes(boxes, scores, iou_threshold: float = DEFAULT_IOU_THRESHOLD, grid_index=None) -> list[int]:
    """Indices of kept boxes (n, 4) in processing order.

    A box is dropped when its IoU with an already kept box strictly exceeds
    ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.size:
        raise ValueError("boxes and scores differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")

    order = nms_order(scores, grid_index)
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    keep: list[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        union = areas[i] + areas[rest] - inter
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[iou <= iou_threshold]
    return keep


def nms(dets: list[Detection], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> list[int]:
    if not dets:
        if not 0.0 < iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
        return []
    boxes = np.array([d.box.as_list() for d in dets])
    scores = np.array([d.score for d in dets])
    gidx = np.array([d.grid_index for d in dets])
    return nms_boxes(boxes, scores, iou_threshold, gidx)
