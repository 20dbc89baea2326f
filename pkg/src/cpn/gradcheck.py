"""Finite-difference checks of every autodiff op and of the full training loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import SynthConfig, generate
from .efd import uniform_ts
from .model.config import CpnConfig
from .model.network import init_params
from .model.targets import build_targets
from .model.training import batch_loss


def _off_kinks(x, margin=0.05):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def op_cases(seed: int = 0):
    """(name, scalar function of one tensor, probe point) for each differentiable op."""
    g = np.random.default_rng(seed)
    img = g.normal(size=(2, 3, 4, 4))
    other = ad.Tensor(g.normal(size=(2, 3, 4, 4)))
    k = g.normal(size=(2, 3, 3, 3))
    w = g.normal(size=(4, 5))
    mat = g.normal(size=(5, 3))
    scale, shift = g.normal(size=3), g.normal(size=3)
    field = g.normal(size=(2, 2, 4, 4))
    pool_in = g.permutation(32).reshape(1, 2, 4, 4) * 0.1  # distinct maxima
    r = {shape: ad.Tensor(g.normal(size=shape)) for shape in [(2, 2, 4, 4), (3, 4), (4, 3), (2, 9, 4, 4),
                                                             (2, 3, 8, 8), (1, 2, 2, 2), (2, 4, 4)]}
    targets = (other.data > 0).astype(float)
    return [
        ("conv2d", lambda t: (ad.conv2d(t, ad.Tensor(k), padding=1) * r[(2, 2, 4, 4)]).sum(), img),
        ("conv2d_kernel", lambda t: ad.conv2d(ad.Tensor(img), t, ad.Tensor(np.ones(2)), stride=2, padding=1).sum(), k),
        ("linear", lambda t: (ad.linear(t, ad.Tensor(w), ad.Tensor(np.arange(4.0))) * r[(3, 4)]).sum(),
         g.normal(size=(3, 5))),
        ("relu", lambda t: (ad.relu(t) * other).sum(), _off_kinks(img)),
        ("sigmoid", lambda t: (ad.sigmoid(t) * other).sum(), img),
        ("tanh", lambda t: (ad.tanh(t) * other).sum(), img),
        ("abs", lambda t: (ad.absolute(t) * other).sum(), _off_kinks(img)),
        ("add", lambda t: ((t + other) * other).sum(), g.normal(size=(1, 3, 1, 4))),
        ("sub", lambda t: ((other - t) * other).sum(), img),
        ("mul", lambda t: (t * other * t).sum(), img),
        ("matmul", lambda t: ((t @ ad.Tensor(mat)) * r[(4, 3)]).sum(), g.normal(size=(4, 5))),
        ("concat_channels", lambda t: (ad.concat_channels([t, other, t]) * r[(2, 9, 4, 4)]).sum(), img),
        ("upsample_nearest", lambda t: (ad.upsample_nearest(t, 2) * r[(2, 3, 8, 8)]).sum(), img),
        ("maxpool2d", lambda t: (ad.maxpool2d(t, 2) * r[(1, 2, 2, 2)]).sum(), pool_in),
        ("instance_normalize", lambda t: (ad.instance_normalize(t, ad.Tensor(scale), ad.Tensor(shift))
                                             * other).sum(), img),
        ("transpose_reshape", lambda t: (t.transpose(0, 2, 3, 1).reshape(-1, 3) @ ad.Tensor(mat.T)).sum(), img),
        ("take_rows", lambda t: (ad.take_rows(t, [0, 2, 2, 4]) * r[(4, 3)]).sum(), mat),
        ("gather_pixels", lambda t: (ad.gather_pixels(t, [0, 1, 1], [1, 0, 0], [2, 3, 3], [0, 1, 1])
                                     * ad.Tensor([1.0, 2.0, 3.0])).sum(), field),
        ("bce_with_logits", lambda t: ad.bce_with_logits(t, targets), img),
        ("mean", lambda t: (t.mean(axis=1) * r[(2, 4, 4)]).sum(), img),
    ]


def check_ops(eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    return {name: ad.grad_check(fn, x, eps) for name, fn, x in op_cases(seed)}


def check_model(cfg: CpnConfig | None = None, size: int = 16, images: int = 2, eps: float = 1e-5,
                seed: int = 0) -> dict[str, float]:
    """Relative error of d(training loss)/d(parameter) for every parameter array.

    The loss is the full objective on ``images`` synthetic ``size`` x ``size``
    images, so gradients pass through every head, the backbone and refinement.
    It is only piecewise smooth (relu, max pooling, rounding in the refinement
    lookup), so one-sided differences are accepted next to the central one.
    """
    cfg = cfg or CpnConfig(order=2, samples=16, widths=(4, 8), seed=seed)
    data = generate(SynthConfig(height=size, width=size, count=images, min_radius=3, max_radius=size / 4,
                                shape_weights={"circle": 1.0, "ellipse": 1.0}, seed=seed))
    x = np.stack([img.pixels for img in data])
    targets = [build_targets(img.instances, size, size, cfg) for img in data]
    ts = uniform_ts(cfg.samples)
    params = init_params(cfg, seed)
    out = {}
    for name in params:
        def loss(t, name=name):
            return batch_loss({**params, name: t}, x, targets, cfg, ts)[0]
        out[name] = ad.grad_check(loss, params[name].data, eps, one_sided=True)
    return out
