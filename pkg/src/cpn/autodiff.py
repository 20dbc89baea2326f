"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the handful of operations the toy contour proposal network needs are
provided. Every op builds a node in an implicit graph; ``backward`` walks the
graph once in reverse topological order and accumulates gradients into every
tensor that has ``requires_grad`` set.

Arrays are float64 and laid out NCHW for the image ops.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand dimensions do not conform."""


class Tensor:
    """An n-dimensional float64 array that records how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        # Leaves copy their input; op results own a fresh array already.
        arr = np.asarray(data, dtype=DTYPE) if op else np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor ({op or 'leaf'})")
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=backward if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum out the axes numpy broadcasting expanded.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    # Subgradient 0 at exactly 0.
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tensor_sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def take_rows(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]`` along the first axis (index may repeat)."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros(x.shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), backward, "take_rows")


def gather_pixels(x: Tensor, batch, channel, row, col) -> Tensor:
    """Fancy-index a NCHW tensor at per-element ``(batch, channel, row, col)``."""
    idx = tuple(np.asarray(i, dtype=np.intp) for i in (batch, channel, row, col))
    shape = np.broadcast_shapes(*(i.shape for i in idx))

    def backward(g):
        out = np.zeros(x.shape)
        np.add.at(out, idx, np.broadcast_to(g, shape))
        return (out,)

    return _node(x.data[idx], (x,), backward, "gather_pixels")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != first[0] or t.shape[2:] != first[2:]:
            raise ShapeError(f"concat_channels: {t.shape} incompatible with {first}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return _node(np.concatenate([t.data for t in tensors], axis=1), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped (out_features, in_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = matmul(x, transpose(weight, (1, 0)))
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs {weight.shape[0]} outputs")
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# image ops (NCHW)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, kh, kw)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``kernel`` is (C_out, C_in, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = kernel.shape
    if Ci != C:
        raise ShapeError(f"conv2d: kernel expects {Ci} input channels, input has {C}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    if bias is not None and bias.shape != (Co,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs {Co} output channels")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, stride)
    Ho, Wo = win.shape[2], win.shape[3]
    # (B, Ho, Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho, Wo, C * kh * kw)
    wmat = kernel.data.reshape(Co, -1)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)  # (B, Ho, Wo, Co)
        gk = (gt.reshape(-1, Co).T @ cols.reshape(-1, C * kh * kw)).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW, got {x.shape}")
    B, C, H, W = x.shape
    if H % size or W % size:
        raise ShapeError(f"maxpool2d: {H}x{W} not divisible by {size}")
    blocks = x.data.reshape(B, C, H // size, size, W // size, size)
    out = blocks.max(axis=(3, 5))
    # Route the gradient to the first maximal element of each window.
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // size, W // size, size * size)
    arg = flat.argmax(axis=-1)

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gb = gflat.reshape(B, C, H // size, W // size, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(B, C, H, W),)

    return _node(out, (x,), backward, "maxpool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected NCHW, got {x.shape}")
    B, C, H, W = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _node(out, (x,), backward, "upsample")


def instance_normalize(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each sample and channel over its own H x W, then scale and shift per channel.

    There are no running averages and no coupling between samples, so a
    sample's output does not depend on the batch it is in.
    """
    if x.ndim != 4:
        raise ShapeError(f"instance_normalize: expected NCHW, got {x.shape}")
    C = x.shape[1]
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"instance_normalize: scale/shift must be ({C},)")
    axes = (2, 3)
    m = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_scale = scale.data[None, :, None, None]
    out = xhat * g_scale + shift.data[None, :, None, None]

    def backward(g):
        gs = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * g_scale
        gx = inv / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, gs, gb

    return _node(out, (x, scale, shift), backward, "instancenorm")


# ---------------------------------------------------------------------------
# losses on logits


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy computed from logits without overflow."""
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {logits.shape}")
    z = logits.data
    # max(z,0) - z*t + log(1 + exp(-|z|))
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        return (g * (_stable_sigmoid(z) - t) / n,)

    return _node(np.asarray(per.mean()), (logits,), backward, "bce")


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf that requires it."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached: no tensor in its graph requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, eps: float = 1e-5,
               one_sided: bool = False) -> float:
    """Compare ``f``'s analytic gradient at ``x`` with central differences.

    Returns max |analytic - numeric| / max(1, |numeric|) over all components.

    With ``one_sided`` the forward and backward differences are also tried and
    the best of the three estimates counts. That is meant for piecewise-smooth
    functions (relu kinks, rounding) where a kink may lie within ``eps`` of
    ``x``; the step away from the kink still sees the smooth piece.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    probe = Tensor(x0, requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    backward(out)
    analytic = (probe.grad if probe.grad is not None else np.zeros_like(x0)).reshape(-1)
    f0 = out.item()

    worst = 0.0
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xp[i] += eps
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        xp[i] -= 2 * eps
        fm = f(Tensor(xp.reshape(x0.shape))).item()
        estimates = [(fp - fm) / (2 * eps)]
        if one_sided:
            estimates += [(fp - f0) / eps, (f0 - fm) / eps]
        err = min(abs(analytic[i] - n) / max(1.0, abs(n)) for n in estimates)
        worst = max(worst, err)
    return float(worst)
