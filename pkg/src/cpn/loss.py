"""Training objectives of the contour proposal network.

Descriptors enter these functions as (P, 4N+2) batches laid out like
:meth:`FourierDescriptor.to_vector`; a single :class:`FourierDescriptor` or a
1-d vector is treated as a batch of one. Predictions may be tensors; targets
are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .efd import FourierDescriptor, _check_ts, descriptor_dim, fourier_basis
from .refine import DEFAULT_ITERATIONS, DEFAULT_SIGMA, refine_tensor

DEFAULT_SAMPLES = 64


def default_beta(order: int) -> np.ndarray:
    return 2.0 ** -np.arange(order + 1, dtype=np.float64)


@dataclass
class LossWeights:
    order: int
    lam: float = 1.0
    beta: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.beta is None:
            self.beta = default_beta(self.order)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if self.beta.size != self.order + 1:
            raise ValueError(f"beta needs {self.order + 1} entries for order {self.order}, got {self.beta.size}")
        if self.lam < 0 or np.any(self.beta < 0):
            raise ValueError("loss weights must be non-negative")


def _batch(desc) -> ad.Tensor:
    if isinstance(desc, FourierDescriptor):
        desc = desc.to_vector()
    t = ad.as_tensor(desc)
    if t.ndim == 1:
        t = t.reshape(1, -1)
    return t


def sampling_matrices(order: int, ts) -> tuple[np.ndarray, np.ndarray]:
    """Matrices Mx, My (4N+2, S) with ``vec @ Mx`` = x(ts) and ``vec @ My`` = y(ts)."""
    n = order
    sin, cos = fourier_basis(order, ts)
    S = sin.shape[1]
    mx = np.zeros((descriptor_dim(n), S))
    my = np.zeros_like(mx)
    mx[0] = 1.0
    mx[1:n + 1] = sin
    mx[n + 1:2 * n + 1] = cos
    my[2 * n + 1] = 1.0
    my[2 * n + 2:3 * n + 2] = sin
    my[3 * n + 2:] = cos
    return mx, my


def contour_points(desc, order: int, ts) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable contour sampling: (P, S) x and y coordinate tensors."""
    v = _batch(desc)
    if v.shape[1] != descriptor_dim(order):
        raise ValueError(f"descriptor width {v.shape[1]} does not match order {order}")
    mx, my = sampling_matrices(order, ts)
    return v @ mx, v @ my


def _order_of(width: int) -> int:
    if (width - 2) % 4 or width < 6:
        raise ValueError(f"descriptor width {width} is not 4N+2")
    return (width - 2) // 4


def detection_loss(score_logits, targets) -> ad.Tensor:
    """Mean binary cross entropy of sigmoid(logits) against 0/1 targets."""
    o = np.asarray(targets, dtype=np.float64)
    if not np.all((o == 0) | (o == 1)):
        raise ValueError("detection targets must be 0 or 1")
    return ad.bce_with_logits(ad.as_tensor(score_logits), o)


def coord_loss(x, y, x_hat, y_hat):
    """Half the L1 distance between (x, y) and (x_hat, y_hat), elementwise."""
    if any(isinstance(v, ad.Tensor) for v in (x, y, x_hat, y_hat)):
        return 0.5 * (ad.absolute(ad.sub(x, x_hat)) + ad.absolute(ad.sub(y, y_hat)))
    return 0.5 * (np.abs(np.subtract(x, x_hat)) + np.abs(np.subtract(y, y_hat)))


def _check_pair(target, pred) -> tuple[ad.Tensor, ad.Tensor, int]:
    t, p = _batch(target), _batch(pred)
    if t.shape != p.shape:
        raise ValueError(f"target {t.shape} and prediction {p.shape} differ")
    return t, p, _order_of(p.shape[1])


def contour_loss(target, pred, ts) -> ad.Tensor:
    """Per-descriptor mean coordinate loss over sample locations ``ts``; shape (P,)."""
    ts = _check_ts(ts)
    t, p, order = _check_pair(target, pred)
    tx, ty = contour_points(t, order, ts)
    px, py = contour_points(p, order, ts)
    return coord_loss(tx.data, ty.data, px, py).mean(axis=1)


def refine_loss(target, pred, field, ts, iterations: int = DEFAULT_ITERATIONS,
                sigma: float = DEFAULT_SIGMA, batch_index=None) -> ad.Tensor:
    """Like :func:`contour_loss`, but the predicted points are refined first.

    ``field`` is (B, 2, H, W) (or (2, H, W) for a single image); ``batch_index``
    maps each descriptor row to its image.
    """
    ts = _check_ts(ts)
    t, p, order = _check_pair(target, pred)
    v = ad.as_tensor(field)
    if v.ndim == 3:
        v = v.reshape((1,) + v.shape)
    if batch_index is None:
        batch_index = np.zeros(p.shape[0], dtype=np.intp)
    tx, ty = contour_points(t, order, ts)
    px, py = contour_points(p, order, ts)
    rx, ry = refine_tensor(px, py, v, batch_index, iterations, sigma)
    return coord_loss(tx.data, ty.data, rx, ry).mean(axis=1)


def expand_beta(beta: np.ndarray) -> np.ndarray:
    """Per-coefficient weights for [a, b, c, d]: beta on a and c, beta without beta_0 on b and d."""
    beta = np.asarray(beta, dtype=np.float64)
    return np.concatenate([beta, beta[1:], beta, beta[1:]])


def repr_loss(target, pred, beta) -> ad.Tensor:
    """Weighted L1 distance between coefficient vectors; shape (P,)."""
    t, p, order = _check_pair(target, pred)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.size != order + 1:
        raise ValueError(f"beta needs {order + 1} entries for order {order}, got {beta.size}")
    w = expand_beta(beta)[:, None]
    return ad.matmul(ad.absolute(ad.sub(t.data, p)), w).reshape(-1)


def cpn_loss(score_logits, o, per_pixel: ad.Tensor | None) -> ad.Tensor:
    """Detection loss averaged over every cell plus object terms averaged over positive cells.

    ``per_pixel`` holds L_contour + L_refine + lambda * L_repr for each
    positive cell, in the order of ``np.flatnonzero(o)``.
    """
    o = np.asarray(o, dtype=np.float64)
    logits = ad.as_tensor(score_logits)
    if logits.shape != o.shape:
        raise ValueError(f"score grid {logits.shape} and target grid {o.shape} differ")
    total = detection_loss(logits, o)
    n_pos = int(o.sum())
    if per_pixel is None or n_pos == 0:
        if per_pixel is not None and per_pixel.size:
            raise ValueError("object terms given but no positive cells")
        return total
    if per_pixel.shape != (n_pos,):
        raise ValueError(f"expected {n_pos} per-pixel object terms, got shape {per_pixel.shape}")
    return total + per_pixel.sum() * (1.0 / n_pos)


def object_terms(target, pred, field, ts, weights: LossWeights, iterations: int = DEFAULT_ITERATIONS,
                 sigma: float = DEFAULT_SIGMA, batch_index=None) -> ad.Tensor:
    """L_contour + L_refine + lambda * L_repr for each positive cell; shape (P,)."""
    terms = contour_loss(target, pred, ts) + refine_loss(target, pred, field, ts, iterations, sigma, batch_index)
    if weights.lam:
        terms = terms + weights.lam * repr_loss(target, pred, weights.beta)
    return terms
