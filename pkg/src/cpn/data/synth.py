"""Synthetic shape images with full instance annotations.

Objects are circles, ellipses, triangles or random smooth blobs, drawn darker
than a noisy background. Annotations keep each object's complete polygon even
where a later object covers it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..efd import FourierDescriptor, canonicalize, sample_contour, uniform_ts
from ..geometry import rasterize

SHAPES = ("circle", "ellipse", "triangle", "blob")


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W) floats in [0, 1]
    instances: list[np.ndarray] = field(default_factory=list)  # (K, 2) polygons

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def masks(self) -> list[np.ndarray]:
        return [rasterize(p, self.height, self.width) for p in self.instances]


@dataclass
class SynthConfig:
    height: int = 32
    width: int = 32
    count: int = 100
    min_objects: int = 1
    max_objects: int = 3
    min_radius: float = 4.0
    max_radius: float = 9.0
    shape_weights: dict = field(default_factory=lambda: {"circle": 1.0, "ellipse": 1.0, "triangle": 1.0, "blob": 1.0})
    allow_overlap: bool = False
    background: tuple = (0.65, 0.9)
    foreground: tuple = (0.1, 0.4)
    noise: float = 0.04
    seed: int = 0

    def validate(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ValueError("images must be at least 16x16")
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("object count range is empty")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("radius range is empty")
        if 2 * self.max_radius + 2 > min(self.height, self.width):
            raise ValueError(
                f"objects of radius {self.max_radius} do not fit a {self.height}x{self.width} image"
            )
        unknown = set(self.shape_weights) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}")
        if any(w < 0 for w in self.shape_weights.values()) or sum(self.shape_weights.values()) <= 0:
            raise ValueError("shape weights must be non-negative with a positive sum")
        for name in ("background", "foreground"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi <= 1:
                raise ValueError(f"{name} intensity range must lie in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown synth config keys {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.background = tuple(cfg.background)
        cfg.foreground = tuple(cfg.foreground)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["background"] = list(self.background)
        out["foreground"] = list(self.foreground)
        out["shape_weights"] = dict(self.shape_weights)
        return out


def _circle(rng, radius):
    k = 48
    phase = rng.uniform(0, 2 * np.pi)
    th = phase + 2 * np.pi * np.arange(k) / k
    return np.stack([radius * np.cos(th), radius * np.sin(th)], axis=1)


def _ellipse(rng, radius):
    k = 48
    minor = radius * rng.uniform(0.5, 0.9)
    rot = rng.uniform(0, np.pi)
    th = 2 * np.pi * np.arange(k) / k
    local = np.stack([radius * np.cos(th), minor * np.sin(th)], axis=1)
    c, s = np.cos(rot), np.sin(rot)
    return local @ np.array([[c, s], [-s, c]])


def _triangle(rng, radius):
    # Vertices on a circle with jittered angles keep the triangle fat.
    base = rng.uniform(0, 2 * np.pi)
    angles = base + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3]) + rng.uniform(-0.35, 0.35, 3)
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def _blob(rng, radius):
    order = int(rng.integers(3, 7))
    a = np.zeros(order + 1)
    b = np.zeros(order)
    c = np.zeros(order + 1)
    d = np.zeros(order)
    b[0] = c[1] = radius
    # Harmonics n >= 2 with total speed below the base circle's keeps the curve simple.
    budget = 0.75 * radius
    raw = rng.normal(size=(4, order - 1)) / np.arange(2, order + 1) ** 1.5
    scale = budget / np.sum(np.abs(raw) * np.arange(2, order + 1))
    raw *= scale * rng.uniform(0.4, 1.0)
    a[2:], b[1:], c[2:], d[1:] = raw
    desc = FourierDescriptor(a, b, c, d)
    return sample_contour(desc, uniform_ts(64))


_MAKERS = {"circle": _circle, "ellipse": _ellipse, "triangle": _triangle, "blob": _blob}


def _place(rng, cfg: SynthConfig, shape: str) -> np.ndarray:
    radius = rng.uniform(cfg.min_radius, cfg.max_radius)
    local = _MAKERS[shape](rng, radius)
    local *= min(1.0, radius / np.hypot(local[:, 0], local[:, 1]).max())
    lo, hi = local.min(axis=0), local.max(axis=0)
    cx = rng.uniform(-lo[0] + 1, cfg.width - hi[0] - 1)
    cy = rng.uniform(-lo[1] + 1, cfg.height - hi[1] - 1)
    return canonicalize(local + [cx, cy])


def generate_one(cfg: SynthConfig, index: int) -> LabeledImage:
    """Image ``index`` of the dataset; depends only on (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    names = [s for s in SHAPES if cfg.shape_weights.get(s, 0) > 0]
    probs = np.array([cfg.shape_weights[s] for s in names], dtype=np.float64)
    probs /= probs.sum()
    H, W = cfg.height, cfg.width

    for _ in range(100):
        n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        polys, masks = [], []
        occupied = np.zeros((H, W), dtype=bool)
        for _ in range(n):
            for _ in range(100):
                poly = _place(rng, cfg, names[rng.choice(len(names), p=probs)])
                mask = rasterize(poly, H, W)
                if mask.any() and (cfg.allow_overlap or not (mask & occupied).any()):
                    break
            else:
                break
            polys.append(poly)
            masks.append(mask)
            occupied |= mask
        if len(polys) == n:
            break
    else:
        raise RuntimeError(f"could not place {cfg.max_objects} objects without overlap in a {H}x{W} image")

    img = np.full((H, W), rng.uniform(*cfg.background))
    for mask in masks:
        img[mask] = rng.uniform(*cfg.foreground)
    img += rng.normal(0.0, cfg.noise, size=img.shape)
    return LabeledImage(np.clip(img, 0.0, 1.0), polys)


def generate(cfg: SynthConfig) -> list[LabeledImage]:
    cfg.validate()
    return [generate_one(cfg, i) for i in range(cfg.count)]
