"""Fourier contour descriptors.

A descriptor of order N holds coefficients a_0..a_N, b_1..b_N, c_0..c_N and
d_1..d_N (in pixels). The contour it encodes is, for t in [0, 1],

    x(t) = a_0 + sum_n a_n sin(2 pi n t) + b_n cos(2 pi n t)
    y(t) = c_0 + sum_n c_n sin(2 pi n t) + d_n cos(2 pi n t)

which is closed and periodic. Flattened, a descriptor is the vector
[a, b, c, d] of length 4N + 2.

Polylines are plain ``(K, 2)`` float arrays of (x, y) pixel coordinates,
implicitly closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class DegeneratePolygonError(ValueError):
    """The polygon has fewer than three distinct vertices or zero area."""


def descriptor_dim(order: int) -> int:
    """Length of the flattened descriptor vector for ``order`` harmonics."""
    if int(order) != order or order < 1:
        raise ValueError(f"order must be an integer >= 1, got {order!r}")
    return 4 * int(order) + 2


@dataclass(frozen=True)
class FourierDescriptor:
    a: np.ndarray  # (N+1,) sine coefficients of x, a[0] is the x offset
    b: np.ndarray  # (N,) cosine coefficients of x
    c: np.ndarray  # (N+1,) sine coefficients of y, c[0] is the y offset
    d: np.ndarray  # (N,) cosine coefficients of y

    def __post_init__(self):
        arrays = {}
        for name in "abcd":
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"descriptor coefficient array {name!r} is not finite")
            arr.flags.writeable = False
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["b"].size
        if n < 1 or arrays["a"].size != n + 1 or arrays["c"].size != n + 1 or arrays["d"].size != n:
            raise ValueError(
                "inconsistent descriptor lengths: "
                + ", ".join(f"{k}={v.size}" for k, v in arrays.items())
            )

    @property
    def order(self) -> int:
        return self.b.size

    @property
    def offset(self) -> tuple[float, float]:
        return float(self.a[0]), float(self.c[0])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c, self.d])

    @classmethod
    def from_vector(cls, vec, order: int | None = None) -> "FourierDescriptor":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if order is None:
            if (vec.size - 2) % 4 or vec.size < 6:
                raise ValueError(f"vector length {vec.size} is not 4N+2")
            order = (vec.size - 2) // 4
        if vec.size != descriptor_dim(order):
            raise ValueError(f"vector length {vec.size} != {descriptor_dim(order)}")
        n = order
        return cls(vec[: n + 1], vec[n + 1: 2 * n + 1], vec[2 * n + 1: 3 * n + 2], vec[3 * n + 2:])

    @classmethod
    def zeros(cls, order: int, offset=(0.0, 0.0)) -> "FourierDescriptor":
        descriptor_dim(order)
        a = np.zeros(order + 1)
        c = np.zeros(order + 1)
        a[0], c[0] = offset
        return cls(a, np.zeros(order), c, np.zeros(order))

    def translated(self, dx: float, dy: float) -> "FourierDescriptor":
        a = self.a.copy()
        c = self.c.copy()
        a[0] += dx
        c[0] += dy
        return FourierDescriptor(a, self.b, c, self.d)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FourierDescriptor":
        try:
            order = int(obj["order"])
            desc = cls(obj["a"], obj["b"], obj["c"], obj["d"])
        except KeyError as exc:
            raise ValueError(f"descriptor JSON is missing key {exc}") from None
        if desc.order != order:
            raise ValueError(f"descriptor JSON declares order {order} but holds {desc.order} harmonics")
        return desc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FourierDescriptor":
        return cls.from_dict(json.loads(text))


def uniform_ts(count: int) -> np.ndarray:
    """``count`` evenly spaced locations (s - 1) / count, s = 1..count."""
    if count < 1:
        raise ValueError("need at least one sample location")
    return np.arange(count, dtype=np.float64) / count


def _check_ts(ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    if ts.size == 0:
        raise ValueError("ts must be non-empty")
    if np.any(ts < 0.0) or np.any(ts > 1.0) or not np.all(np.isfinite(ts)):
        raise ValueError("every t must lie in [0, 1]")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("ts must be strictly increasing")
    return ts


def fourier_basis(order: int, ts) -> tuple[np.ndarray, np.ndarray]:
    """Sine and cosine basis matrices, each (order, len(ts)).

    Row n-1 holds sin(2 pi n t) / cos(2 pi n t) so that ``a[1:] @ sin + b @ cos``
    is the harmonic part of x(t).
    """
    ts = _check_ts(ts)
    phase = 2.0 * np.pi * np.arange(1, order + 1)[:, None] * ts[None, :]
    return np.sin(phase), np.cos(phase)


def sample_contour(desc: FourierDescriptor, ts) -> np.ndarray:
    """Evaluate the descriptor at each ``t`` in ``ts``; returns (len(ts), 2)."""
    sin, cos = fourier_basis(desc.order, ts)
    x = desc.a[0] + desc.a[1:] @ sin + desc.b @ cos
    y = desc.c[0] + desc.c[1:] @ sin + desc.d @ cos
    return np.stack([x, y], axis=1)


def sample_contours(vectors: np.ndarray, order: int, ts) -> np.ndarray:
    """Batched :func:`sample_contour` over flattened descriptors (P, 4N+2) -> (P, S, 2)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = order
    sin, cos = fourier_basis(order, ts)
    a, b = vectors[:, : n + 1], vectors[:, n + 1: 2 * n + 1]
    c, d = vectors[:, 2 * n + 1: 3 * n + 2], vectors[:, 3 * n + 2:]
    x = a[:, :1] + a[:, 1:] @ sin + b @ cos
    y = c[:, :1] + c[:, 1:] @ sin + d @ cos
    return np.stack([x, y], axis=-1)


# ---------------------------------------------------------------------------
# polylines


AREA_RTOL = 1e-12


def signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _dedupe(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"polyline must be (K, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("polyline has non-finite coordinates")
    if len(pts) == 0:
        return pts
    keep = np.any(pts != np.roll(pts, 1, axis=0), axis=1)
    if not keep.any():
        keep[0] = True
    return pts[keep]


def canonicalize(points) -> np.ndarray:
    """Return the polygon with positive signed area, starting at its min-y (then min-x) vertex.

    Consecutive duplicate vertices (including a repeated closing vertex) are
    dropped. The result is idempotent under a second call.
    """
    pts = _dedupe(points)
    if len(pts) < 3:
        raise DegeneratePolygonError(f"polygon has {len(pts)} distinct vertices, need >= 3")
    area = signed_area(pts)
    extent = float(np.ptp(pts, axis=0).max())
    # Relative tolerance: near-zero areas change sign with summation order.
    if not np.isfinite(area) or abs(area) <= AREA_RTOL * extent * extent:
        raise DegeneratePolygonError("polygon has zero signed area")
    if area < 0:
        pts = pts[::-1]
    start = np.lexsort((pts[:, 0], pts[:, 1]))[0]
    return np.ascontiguousarray(np.roll(pts, -start, axis=0))


def arclength_params(points) -> np.ndarray:
    """Normalised cumulative arc length at each vertex of the closed polygon; first is 0."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
    total = seg.sum()
    if total <= 0:
        raise DegeneratePolygonError("polygon has zero perimeter")
    return np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / total


def fit_descriptor(points, order: int) -> FourierDescriptor:
    """Order-N Fourier series of the polygon traversed at constant speed.

    The polygon is parameterised by normalised arc length starting at its first
    vertex; callers wanting unique targets pass a :func:`canonicalize`-d
    polygon. Coefficients are the exact integrals of the piecewise-linear
    curve, so no resampling is involved.
    """
    descriptor_dim(order)
    pts = _dedupe(points)
    if len(pts) < 3 or signed_area(pts) == 0.0:
        raise DegeneratePolygonError("cannot fit a descriptor to a degenerate polygon")

    nxt = np.roll(pts, -1, axis=0)
    delta = nxt - pts  # (K, 2) edge vectors, last edge closes the loop
    seg = np.hypot(delta[:, 0], delta[:, 1])
    dt = seg / seg.sum()
    t1 = np.cumsum(dt)
    t0 = t1 - dt
    t1[-1] = 1.0

    # Mean value: the trapezoid rule is exact on each linear piece.
    offset = ((pts + nxt) * 0.5 * dt[:, None]).sum(axis=0)

    # Integrate by parts: the periodic boundary terms cancel and only the
    # constant per-segment velocity remains.
    omega = 2.0 * np.pi * np.arange(1, order + 1)[:, None]  # (N, 1)
    vel = delta / dt[:, None]  # (K, 2)
    dsin = np.sin(omega * t1) - np.sin(omega * t0)  # (N, K)
    dcos = np.cos(omega * t1) - np.cos(omega * t0)
    sin_coef = 2.0 / omega**2 * (dsin @ vel)  # (N, 2)
    cos_coef = 2.0 / omega**2 * (dcos @ vel)

    a = np.concatenate([[offset[0]], sin_coef[:, 0]])
    c = np.concatenate([[offset[1]], sin_coef[:, 1]])
    return FourierDescriptor(a, cos_coef[:, 0], c, cos_coef[:, 1])


def fit_canonical(points, order: int) -> FourierDescriptor:
    """Canonicalise, then fit. This is how ground-truth targets are built."""
    return fit_descriptor(canonicalize(points), order)
