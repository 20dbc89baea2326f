"""Per-cell supervision targets built from instance polygons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..efd import DegeneratePolygonError, canonicalize, descriptor_dim, fit_descriptor
from ..geometry import rasterize
from .config import CpnConfig


@dataclass
class TargetGrid:
    o: np.ndarray  # (h2, w2) 0/1
    descriptors: np.ndarray  # (h2, w2, 4N+2) absolute targets, zero on negative cells
    instance: np.ndarray  # (h2, w2) assigned instance index, -1 on negative cells
    skipped: int = 0  # degenerate instances ignored

    @property
    def positives(self) -> np.ndarray:
        """Row-major flat indices of positive cells."""
        return np.flatnonzero(self.o)

    def shape_targets(self) -> np.ndarray:
        """Descriptor targets without the offsets (a_0, c_0), one row per positive cell."""
        vec = self.descriptors.reshape(-1, self.descriptors.shape[-1])[self.positives]
        n = (vec.shape[1] - 2) // 4
        keep = np.r_[1:n + 1, n + 1:2 * n + 1, 2 * n + 2:3 * n + 2, 3 * n + 2:4 * n + 2]
        return vec[:, keep]

    def location_targets(self, stride: int) -> np.ndarray:
        """(a_0, c_0) minus the cell centre, in units of the stride; one row per positive cell."""
        w2 = self.o.shape[1]
        flat = self.positives
        centres = cell_centres(flat, w2, stride)
        vec = self.descriptors.reshape(-1, self.descriptors.shape[-1])[flat]
        n = (vec.shape[1] - 2) // 4
        return (vec[:, [0, 2 * n + 1]] - centres) / stride


def cell_centres(flat_index, grid_width: int, stride: int) -> np.ndarray:
    """(x, y) input-pixel centres of row-major grid cells."""
    rows, cols = np.divmod(np.asarray(flat_index, dtype=np.intp), grid_width)
    return np.stack([(cols + 0.5) * stride, (rows + 0.5) * stride], axis=-1).astype(np.float64)


def grid_size(height: int, width: int, stride: int) -> tuple[int, int]:
    return -(-height // stride), -(-width // stride)


def build_targets(instances, height: int, width: int, cfg: CpnConfig) -> TargetGrid:
    """Positive cells are those whose centre lies inside at least one instance.

    A cell inside several instances belongs to the one whose descriptor
    centroid (a_0, c_0) is closest to the cell centre; ties go to the lower
    instance index.
    """
    s = cfg.stride
    h2, w2 = grid_size(height, width, s)
    D = descriptor_dim(cfg.order)
    best = np.full((h2, w2), np.inf)
    owner = np.full((h2, w2), -1, dtype=np.intp)
    descs = []
    skipped = 0
    centres = cell_centres(np.arange(h2 * w2), w2, s).reshape(h2, w2, 2)
    for idx, poly in enumerate(instances):
        try:
            canon = canonicalize(poly)
            desc = fit_descriptor(canon, cfg.order)
        except DegeneratePolygonError:
            skipped += 1
            descs.append(None)
            continue
        descs.append(desc)
        # Cell centres ((j+.5)s, (i+.5)s) are pixel centres of the polygon scaled by 1/s.
        inside = rasterize(canon / s, h2, w2)
        dist = np.hypot(centres[..., 0] - desc.a[0], centres[..., 1] - desc.c[0])
        take = inside & (dist < best)
        best[take] = dist[take]
        owner[take] = idx
    o = (owner >= 0).astype(np.uint8)
    out = np.zeros((h2, w2, D))
    for idx, desc in enumerate(descs):
        if desc is not None:
            out[owner == idx] = desc.to_vector()
    return TargetGrid(o=o, descriptors=out, instance=owner, skipped=skipped)
