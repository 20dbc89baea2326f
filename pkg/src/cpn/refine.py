"""Local refinement of contour coordinates with a residual field.

Each iteration snaps a coordinate to the nearest lattice point and adds
``sigma * tanh(v)`` read at that point:

    [x, y] <- [round(x), round(y)] + sigma * tanh(v[round(y), round(x)])

``v`` is laid out (2, H, W) with channel 0 the x residual and channel 1 the
y residual. Rounding is half-to-even. Lookups outside the image are clamped
to the border; the snapped coordinate itself is not clamped.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

DEFAULT_SIGMA = 2.0
DEFAULT_ITERATIONS = 4


def _check(iterations: int, sigma: float) -> None:
    if int(iterations) != iterations or iterations < 0:
        raise ValueError(f"iterations must be a non-negative integer, got {iterations!r}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")


def _lookup_index(x: np.ndarray, y: np.ndarray, height: int, width: int):
    rx, ry = np.rint(x), np.rint(y)
    col = np.clip(rx, 0, width - 1).astype(np.intp)
    row = np.clip(ry, 0, height - 1).astype(np.intp)
    return rx, ry, row, col


def refine(x, y, field: np.ndarray, iterations: int = DEFAULT_ITERATIONS, sigma: float = DEFAULT_SIGMA):
    """Refine coordinates (scalars or arrays) against a (2, H, W) residual field."""
    _check(iterations, sigma)
    v = np.asarray(field, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] != 2:
        raise ValueError(f"residual field must be (2, H, W), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("residual field has non-finite values")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, H, W = v.shape
    for _ in range(int(iterations)):
        rx, ry, row, col = _lookup_index(x, y, H, W)
        x = rx + sigma * np.tanh(v[0, row, col])
        y = ry + sigma * np.tanh(v[1, row, col])
    return x, y


def refine_tensor(x: ad.Tensor, y: ad.Tensor, field: ad.Tensor, batch_index,
                  iterations: int = DEFAULT_ITERATIONS, sigma: float = DEFAULT_SIGMA):
    """Differentiable refinement of per-point coordinates.

    ``x`` and ``y`` are (P, S) tensors of predicted coordinates, ``field`` is
    the (B, 2, H, W) residual tensor and ``batch_index`` (P,) says which image
    each row belongs to. Rounding is not differentiable, so for
    ``iterations >= 1`` gradients reach only ``field``; with zero iterations
    the inputs pass through unchanged.
    """
    _check(iterations, sigma)
    if iterations == 0:
        return x, y
    _, C, H, W = field.shape
    if C != 2:
        raise ValueError(f"residual field must have 2 channels, got {C}")
    bidx = np.asarray(batch_index, dtype=np.intp)[:, None]
    v = field.data
    cx, cy = x.data, y.data
    for _ in range(int(iterations) - 1):
        rx, ry, row, col = _lookup_index(cx, cy, H, W)
        cx = rx + sigma * np.tanh(v[bidx, 0, row, col])
        cy = ry + sigma * np.tanh(v[bidx, 1, row, col])
    rx, ry, row, col = _lookup_index(cx, cy, H, W)
    gx = ad.gather_pixels(field, bidx, 0, row, col)
    gy = ad.gather_pixels(field, bidx, 1, row, col)
    return rx + sigma * ad.tanh(gx), ry + sigma * ad.tanh(gy)
