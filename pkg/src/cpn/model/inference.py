"""From dense network outputs to a short list of refined contour detections."""

from __future__ import annotations

import numpy as np

from ..efd import FourierDescriptor, descriptor_dim, sample_contours, uniform_ts
from ..geometry import bbox_of, rasterize
from ..nms import Detection, nms
from ..refine import refine
from .config import CpnConfig
from .network import ProposalGrid, forward, proposal_grid
from .targets import cell_centres


def shape_placement(order: int) -> tuple[np.ndarray, np.ndarray]:
    """0/1 matrices mapping shape-head (4N) and offset (2) rows into a 4N+2 descriptor."""
    n = order
    D = descriptor_dim(n)
    shape_to_full = np.zeros((4 * n, D))
    cols = np.r_[1:n + 1, n + 1:2 * n + 1, 2 * n + 2:3 * n + 2, 3 * n + 2:4 * n + 2]
    shape_to_full[np.arange(4 * n), cols] = 1.0
    loc_to_full = np.zeros((2, D))
    loc_to_full[0, 0] = 1.0
    loc_to_full[1, 2 * n + 1] = 1.0
    return shape_to_full, loc_to_full


def grid_descriptors(grid: ProposalGrid, flat_index) -> np.ndarray:
    """Absolute descriptor vectors (P, 4N+2) for the given row-major cells."""
    h2, w2 = grid.scores.shape
    flat_index = np.asarray(flat_index, dtype=np.intp)
    shape = grid.shape_coeffs.reshape(h2 * w2, -1)[flat_index]
    loc = cell_centres(flat_index, w2, grid.stride) + grid.offsets.reshape(h2 * w2, 2)[flat_index]
    to_full, loc_full = shape_placement(grid.order)
    return shape @ to_full + loc @ loc_full


def extract(grid: ProposalGrid, cfg: CpnConfig, iterations: int | None = None) -> list[Detection]:
    """Threshold scores, decode and refine contours, then suppress duplicates.

    ``iterations`` overrides the configured refinement count.
    """
    r = cfg.refine_iterations if iterations is None else iterations
    flat = np.flatnonzero(grid.scores.reshape(-1) > cfg.score_threshold)
    if flat.size == 0:
        return []
    vecs = grid_descriptors(grid, flat)
    pts = sample_contours(vecs, grid.order, uniform_ts(cfg.samples))  # (P, S, 2)
    field = grid.residual_field.transpose(2, 0, 1)
    rx, ry = refine(pts[..., 0], pts[..., 1], field, r, cfg.sigma)
    contours = np.stack([rx, ry], axis=-1)
    scores = grid.scores.reshape(-1)[flat]
    dets = [
        Detection(
            score=float(scores[k]),
            descriptor=FourierDescriptor.from_vector(vecs[k], grid.order),
            contour=contours[k],
            box=bbox_of(contours[k]),
            grid_index=int(flat[k]),
        )
        for k in range(flat.size)
    ]
    keep = nms(dets, cfg.nms_threshold)
    return [dets[i] for i in keep]


def predict(params, images, cfg: CpnConfig, batch_size: int = 8, iterations: int | None = None) -> list[list[Detection]]:
    """Detections for each image in ``images`` ((N, H, W) array or list of arrays).

    ``batch_size`` only bounds memory; each image's detections are independent of its batch.
    """
    images = np.asarray(images, dtype=np.float64)
    results: list[list[Detection]] = []
    for start in range(0, len(images), batch_size):
        out = forward(params, images[start:start + batch_size], cfg)
        for b in range(out.logits.shape[0]):
            results.append(extract(proposal_grid(out, b, cfg), cfg, iterations))
    return results


def detection_masks(dets: list[Detection], height: int, width: int) -> list[np.ndarray]:
    return [rasterize(d.contour, height, width) for d in dets]
