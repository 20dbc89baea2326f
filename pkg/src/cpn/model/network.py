"""Toy contour proposal network: a miniature U-Net backbone and four heads.

The backbone has ``len(widths)`` levels. Each level is two conv-relu-norm
blocks; the encoder goes down with 2x2 max pooling and the decoder comes back
up with nearest-neighbour upsampling and skip concatenation. P1 is the
full-resolution decoder output, P2 the decoder output at the grid stride.

Heads on P2 (1x1 convolutions): classification logits, 4N shape
coefficients and 2 location offsets. The 2-channel residual field comes from a
3x3 convolution on P1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .config import CpnConfig


@dataclass
class Outputs:
    logits: ad.Tensor  # (B, 1, h2, w2)
    shape: ad.Tensor  # (B, 4N, h2, w2) as [a_1..a_N, b_1..b_N, c_1..c_N, d_1..d_N]
    offsets: ad.Tensor  # (B, 2, h2, w2) cell-relative, in units of the stride
    residual: ad.Tensor  # (B, 2, H, W) pre-tanh refinement field


@dataclass
class ProposalGrid:
    scores: np.ndarray  # (h2, w2) after sigmoid
    shape_coeffs: np.ndarray  # (h2, w2, 4N)
    offsets: np.ndarray  # (h2, w2, 2) absolute offset minus cell centre, in input pixels
    residual_field: np.ndarray  # (H, W, 2)
    stride: int

    @property
    def order(self) -> int:
        return self.shape_coeffs.shape[-1] // 4


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: CpnConfig, seed: int | None = None) -> dict[str, ad.Tensor]:
    """Parameters keyed by name, drawn uniformly in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    raw: dict[str, np.ndarray] = {}

    def conv(name, cin, cout, k):
        fan = cin * k * k
        raw[f"{name}.w"] = _uniform(rng, (cout, cin, k, k), fan)
        raw[f"{name}.b"] = _uniform(rng, (cout,), fan)

    def block(name, cin, cout):
        conv(f"{name}.conv1", cin, cout, 3)
        raw[f"{name}.norm1.scale"] = np.ones(cout)
        raw[f"{name}.norm1.shift"] = np.zeros(cout)
        conv(f"{name}.conv2", cout, cout, 3)
        raw[f"{name}.norm2.scale"] = np.ones(cout)
        raw[f"{name}.norm2.shift"] = np.zeros(cout)

    widths = cfg.widths
    cin = 1
    for level, w in enumerate(widths):
        block(f"enc{level}", cin, w)
        cin = w
    for level in range(len(widths) - 2, -1, -1):
        block(f"dec{level}", widths[level + 1] + widths[level], widths[level])
    p2 = widths[cfg.stride_level]
    conv("head.cls", p2, 1, 1)
    conv("head.shape", p2, 4 * cfg.order, 1)
    conv("head.loc", p2, 2, 1)
    conv("head.refine", widths[0], 2, 3)
    return {k: ad.Tensor(v, requires_grad=True) for k, v in raw.items()}


def _block(params, name, x):
    for i in (1, 2):
        x = ad.conv2d(x, params[f"{name}.conv{i}.w"], params[f"{name}.conv{i}.b"], padding=1)
        x = ad.relu(x)
        x = ad.instance_normalize(x, params[f"{name}.norm{i}.scale"], params[f"{name}.norm{i}.shift"])
    return x


def _head(params, name, x, padding=0):
    return ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], padding=padding)


def as_batch(images) -> ad.Tensor:
    """Accept (H, W), (B, H, W) or (B, 1, H, W) input; return a (B, 1, H, W) tensor."""
    if isinstance(images, ad.Tensor):
        if images.ndim == 4 and images.shape[1] == 1:
            return images
        images = images.data
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise ad.ShapeError(f"expected grayscale images (B, H, W), got {arr.shape}")
    return ad.Tensor(arr)


def forward(params: dict[str, ad.Tensor], images, cfg: CpnConfig) -> Outputs:
    x = as_batch(images)
    H, W = x.shape[2:]
    down = cfg.downsampling
    if H % down or W % down:
        raise ad.ShapeError(f"image {H}x{W} must be divisible by {down}")
    skips = []
    for level in range(len(cfg.widths)):
        if level:
            x = ad.maxpool2d(x, 2)
        x = _block(params, f"enc{level}", x)
        skips.append(x)
    decoded = {len(cfg.widths) - 1: x}
    for level in range(len(cfg.widths) - 2, -1, -1):
        x = ad.concat_channels([ad.upsample_nearest(x, 2), skips[level]])
        x = _block(params, f"dec{level}", x)
        decoded[level] = x
    p1, p2 = decoded[0], decoded[cfg.stride_level]
    return Outputs(
        logits=_head(params, "head.cls", p2),
        shape=_head(params, "head.shape", p2),
        offsets=_head(params, "head.loc", p2),
        residual=_head(params, "head.refine", p1, padding=1),
    )


def proposal_grid(out: Outputs, index: int, cfg: CpnConfig) -> ProposalGrid:
    """Numpy view of one image's dense predictions."""
    logits = out.logits.data[index, 0]
    scores = 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))
    return ProposalGrid(
        scores=scores,
        shape_coeffs=out.shape.data[index].transpose(1, 2, 0),
        offsets=out.offsets.data[index].transpose(1, 2, 0) * cfg.stride,
        residual_field=out.residual.data[index].transpose(1, 2, 0),
        stride=cfg.stride,
    )
