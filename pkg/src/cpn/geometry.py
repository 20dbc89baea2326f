"""Boxes, polygon rasterisation and intersection-over-union."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"malformed box {self.as_list()}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def as_array(self) -> np.ndarray:
        return np.array(self.as_list(), dtype=np.float64)


def bbox_of(points) -> Box:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("bbox_of: empty polyline")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Box(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def iou_box(a: Box, b: Box) -> float:
    """IoU of closed boxes; 0 when the union has no area."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def iou_box_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise :func:`iou_box` over (n, 4) and (m, 4) arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)[:, None, :]
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)[None, :, :]
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou_mask(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def iou_mask_matrix(masks_a, masks_b) -> np.ndarray:
    """Pairwise mask IoU between two lists of equally sized boolean masks."""
    if len(masks_a) == 0 or len(masks_b) == 0:
        return np.zeros((len(masks_a), len(masks_b)))
    fa = np.stack([np.asarray(m, dtype=bool).reshape(-1) for m in masks_a]).astype(np.float64)
    fb = np.stack([np.asarray(m, dtype=bool).reshape(-1) for m in masks_b]).astype(np.float64)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("mask dimensions differ")
    inter = fa @ fb.T
    union = fa.sum(1)[:, None] + fb.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1.0), 0.0)


def rasterize(points, height: int, width: int) -> np.ndarray:
    """Scanline fill of a closed polygon into a (height, width) boolean mask.

    Pixel (i, j) is set iff its centre (j + 0.5, i + 0.5) has nonzero winding
    number. An edge counts for a scanline when y0 <= y < y1 (or y1 <= y < y0),
    and a crossing contributes to centres strictly left of it, so centres
    exactly on an edge count as outside.
    Degenerate input yields an empty mask.
    """
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    mask = np.zeros((height, width), dtype=bool)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3 or not np.all(np.isfinite(pts)):
        return mask
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    rising = y1 > y0
    falling = y1 < y0
    direction = np.where(rising, 1, -1)

    lo = np.minimum(y0, y1)
    hi = np.maximum(y0, y1)
    row_lo = max(int(np.floor(lo.min() - 0.5)), 0)
    row_hi = min(int(np.ceil(hi.max())), height)
    if row_lo >= row_hi:
        return mask
    ys = np.arange(row_lo, row_hi) + 0.5  # (R,)

    yy = ys[:, None]
    active = (rising & (y0 <= yy) & (yy < y1)) | (falling & (y1 <= yy) & (yy < y0))
    rows, edges = np.nonzero(active)
    if rows.size == 0:
        return mask
    ex0, ey0, ex1, ey1 = x0[edges], y0[edges], x1[edges], y1[edges]
    xc = ex0 + (ys[rows] - ey0) * (ex1 - ex0) / (ey1 - ey0)
    # Columns j with j + 0.5 < xc receive this crossing's direction.
    upto = np.clip(np.ceil(xc - 0.5), 0, width).astype(np.intp)
    diff = np.zeros((row_hi - row_lo, width + 1), dtype=np.int64)
    np.add.at(diff, (rows, np.zeros_like(upto)), direction[edges])
    np.add.at(diff, (rows, upto), -direction[edges])
    winding = np.cumsum(diff[:, :width], axis=1)
    mask[row_lo:row_hi] = winding != 0
    return mask

