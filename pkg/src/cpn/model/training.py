"""End-to-end training with SGD + momentum, and dataset-level evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..checkpoint import save_params
from ..efd import uniform_ts
from ..geometry import iou_mask_matrix
from ..loss import contour_loss, cpn_loss, detection_loss, refine_loss, repr_loss
from ..metrics import THRESHOLDS, MatchResult, evaluate
from .config import CpnConfig, TrainConfig
from .inference import detection_masks, predict, shape_placement
from .network import forward, init_params
from .targets import TargetGrid, build_targets, cell_centres

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "loss", "inst", "contour", "refine", "repr", "positives")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: dict[str, ad.Tensor]
    history: list[dict] = field(default_factory=list)


def batch_loss(params, images: np.ndarray, targets: list[TargetGrid], cfg: CpnConfig, ts) -> tuple[ad.Tensor, dict]:
    """Total loss over a batch plus its components (as floats) for logging."""
    out = forward(params, images, cfg)
    B, _, h2, w2 = out.logits.shape
    o = np.stack([t.o for t in targets]).astype(np.float64)[:, None]
    inst = detection_loss(out.logits, o)
    parts = {"inst": inst.item(), "contour": 0.0, "refine": 0.0, "repr": 0.0, "positives": 0}

    local = [t.positives for t in targets]
    n_pos = sum(len(p) for p in local)
    if n_pos == 0:
        return cpn_loss(out.logits, o, None), parts

    cells = h2 * w2
    flat = np.concatenate([p + b * cells for b, p in enumerate(local)])
    batch_index = np.concatenate([np.full(len(p), b) for b, p in enumerate(local)])
    centres = np.concatenate([cell_centres(p, w2, cfg.stride) for p in local])
    target_vec = np.concatenate([t.descriptors.reshape(cells, -1)[p] for t, p in zip(targets, local)])

    shape_rows = ad.take_rows(out.shape.transpose(0, 2, 3, 1).reshape(B * cells, -1), flat)
    loc_rows = ad.take_rows(out.offsets.transpose(0, 2, 3, 1).reshape(B * cells, 2), flat)
    to_full, loc_full = shape_placement(cfg.order)
    pred_vec = shape_rows @ to_full + (centres + cfg.stride * loc_rows) @ loc_full

    weights = cfg.loss_weights
    l_contour = contour_loss(target_vec, pred_vec, ts)
    l_refine = refine_loss(target_vec, pred_vec, out.residual, ts, cfg.refine_iterations, cfg.sigma, batch_index)
    terms = l_contour + l_refine
    l_repr = None
    if weights.lam:
        l_repr = repr_loss(target_vec, pred_vec, weights.beta)
        terms = terms + weights.lam * l_repr
    parts.update(
        contour=float(l_contour.data.mean()),
        refine=float(l_refine.data.mean()),
        repr=float(l_repr.data.mean()) if l_repr is not None else 0.0,
        positives=int(n_pos),
    )
    return cpn_loss(out.logits, o, terms), parts


def _sample_ts(rng, cfg: CpnConfig, tcfg: TrainConfig) -> np.ndarray:
    if tcfg.ts_mode == "uniform":
        return uniform_ts(cfg.samples)
    while True:
        ts = np.sort(rng.uniform(0.0, 1.0, cfg.samples))
        if np.all(np.diff(ts) > 0):
            return ts


def train(dataset, cfg: CpnConfig, tcfg: TrainConfig, checkpoint_dir=None, params=None) -> TrainResult:
    """Fit the network to ``dataset`` (a list of LabeledImage).

    The loss history holds one row per epoch with the mean of each loss term
    over that epoch's steps. Identical configs reproduce it bit for bit.
    """
    if not dataset:
        raise ValueError("training set is empty")
    params = init_params(cfg) if params is None else params
    images = np.stack([img.pixels for img in dataset]).astype(np.float64)
    H, W = images.shape[1:]
    targets = [build_targets(img.instances, H, W, cfg) for img in dataset]
    skipped = sum(t.skipped for t in targets)
    if skipped:
        log.warning("skipped %d degenerate instance polygons", skipped)

    rng = np.random.default_rng(tcfg.seed)
    velocity = {k: np.zeros(p.shape) for k, p in params.items()}
    history: list[dict] = []
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(dataset))
        sums = dict.fromkeys(HISTORY_FIELDS[1:], 0.0)
        steps = 0
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            ts = _sample_ts(rng, cfg, tcfg)
            for p in params.values():
                p.zero_grad()
            try:
                loss, parts = batch_loss(params, images[idx], [targets[i] for i in idx], cfg, ts)
                ad.backward(loss)
            except ValueError as exc:
                if "non-finite" in str(exc):
                    raise TrainingDiverged(f"epoch {epoch}, step {steps}: {exc}") from exc
                raise
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"epoch {epoch}, step {steps}: loss is {loss.item()}")
            for k, p in params.items():
                g = p.grad if p.grad is not None else 0.0
                velocity[k] = tcfg.momentum * velocity[k] + g
                with np.errstate(over="ignore", invalid="ignore"):  # caught just below
                    new = p.data - tcfg.learning_rate * velocity[k]
                if not np.all(np.isfinite(new)):
                    raise TrainingDiverged(f"epoch {epoch}, step {steps}: parameter {k} became non-finite")
                params[k] = ad.Tensor(new, requires_grad=True)
            sums["loss"] += loss.item()
            for key in ("inst", "contour", "refine", "repr", "positives"):
                sums[key] += parts[key]
            steps += 1
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        history.append(row)
        log.info("epoch %d loss %.5f", epoch, row["loss"])
        if ckpt is not None:
            save_params(ckpt / f"epoch_{epoch:04d}.cpnw", params)
    return TrainResult(params, history)


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def evaluate_model(params, dataset, cfg: CpnConfig, iterations: int | None = None, batch_size: int = 8,
                   thresholds=THRESHOLDS) -> dict[float, MatchResult]:
    """Micro-averaged mask-IoU matching of predictions against annotations."""
    if not dataset:
        return {t: MatchResult(0, 0, 0) for t in thresholds}
    images = np.stack([img.pixels for img in dataset])
    dets = predict(params, images, cfg, batch_size=batch_size, iterations=iterations)
    tables = []
    for img, found in zip(dataset, dets):
        pred_masks = detection_masks(found, img.height, img.width)
        tables.append(iou_mask_matrix(pred_masks, img.masks()))
    return evaluate(tables, thresholds)
