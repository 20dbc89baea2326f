from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..loss import DEFAULT_SAMPLES, LossWeights, default_beta
from ..nms import DEFAULT_IOU_THRESHOLD
from ..refine import DEFAULT_ITERATIONS, DEFAULT_SIGMA


@dataclass
class CpnConfig:
    order: int = 4
    samples: int = DEFAULT_SAMPLES
    stride: int = 2
    score_threshold: float = 0.5
    nms_threshold: float = DEFAULT_IOU_THRESHOLD
    refine_iterations: int = DEFAULT_ITERATIONS
    sigma: float = DEFAULT_SIGMA
    widths: tuple = (16, 32, 32)
    lam: float = 1.0
    beta: list | None = None
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self) -> None:
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("order must be an integer >= 1")
        if self.samples < 3:
            raise ValueError("need at least 3 contour samples")
        if self.stride not in (1, 2, 4):
            raise ValueError("stride must be 1, 2 or 4")
        if not 0 < self.score_threshold < 1 or not 0 < self.nms_threshold < 1:
            raise ValueError("thresholds must lie in (0, 1)")
        if self.refine_iterations < 0 or self.sigma <= 0:
            raise ValueError("refinement needs iterations >= 0 and sigma > 0")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("backbone widths must be positive")
        if (1 << (len(self.widths) - 1)) < self.stride:
            raise ValueError(f"stride {self.stride} needs at least {self.stride.bit_length()} backbone levels")
        self.loss_weights  # validates beta

    @property
    def loss_weights(self) -> LossWeights:
        beta = default_beta(self.order) if self.beta is None else np.asarray(self.beta, dtype=np.float64)
        return LossWeights(self.order, self.lam, beta)

    @property
    def stride_level(self) -> int:
        return self.stride.bit_length() - 1

    @property
    def downsampling(self) -> int:
        return 1 << (len(self.widths) - 1)

    @classmethod
    def from_dict(cls, obj: dict) -> "CpnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["widths"] = list(self.widths)
        return out


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    ts_mode: str = "uniform"  # or "random"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.ts_mode not in ("uniform", "random"):
            raise ValueError(f"ts_mode must be 'uniform' or 'random', got {self.ts_mode!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


__all__ = ["CpnConfig", "TrainConfig"]
