"""Instance matching and F1 scores over IoU thresholds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou_box_matrix, iou_mask_matrix

# 0.50, 0.55, ..., 0.90
THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * k, 2) for k in range(9))


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.pairs + other.pairs)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0


def _kind(items) -> str | None:
    kinds = {"box" if isinstance(x, Box) else "mask" for x in items}
    if len(kinds) > 1:
        raise TypeError("cannot mix boxes and masks in one match")
    return kinds.pop() if kinds else None


def iou_table(preds, gts) -> np.ndarray:
    kp, kg = _kind(preds), _kind(gts)
    if kp and kg and kp != kg:
        raise TypeError(f"predictions are {kp}es but ground truth are {kg}es")
    kind = kp or kg
    if kind == "box":
        return iou_box_matrix([b.as_list() for b in preds], [b.as_list() for b in gts]).reshape(len(preds), len(gts))
    return iou_mask_matrix(preds, gts)


def greedy_pairs(table: np.ndarray) -> list[tuple[int, int, float]]:
    """Match pairs in descending IoU order; each side is used at most once.

    Ties go to the lower prediction index, then the lower ground-truth index.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.size == 0:
        return []
    p_idx, g_idx = np.indices(table.shape).reshape(2, -1)
    vals = table[p_idx, g_idx]
    order = np.lexsort((g_idx, p_idx, -vals))
    used_p: set[int] = set()
    used_g: set[int] = set()
    pairs = []
    for k in order:
        p, g = int(p_idx[k]), int(g_idx[k])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g, float(vals[k])))
    return pairs


def match_table(table: np.ndarray, tau: float) -> MatchResult:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    n_pred, n_gt = np.shape(table)
    pairs = []
    for p, g, iou in greedy_pairs(table):
        # Pairs arrive in descending IoU, so the rest cannot reach tau either.
        if iou < tau:
            break
        pairs.append((p, g, iou))
    tp = len(pairs)
    return MatchResult(tp, n_pred - tp, n_gt - tp, pairs)


def match(preds, gts, tau: float) -> MatchResult:
    """Match predicted to ground-truth instances (both masks or both boxes) at IoU >= tau."""
    return match_table(iou_table(preds, gts), tau)


def f1(m: MatchResult) -> float:
    denom = m.tp + 0.5 * (m.fp + m.fn)
    return m.tp / denom if denom else 1.0


def f1_avg(results_by_tau: dict[float, MatchResult]) -> float:
    """Mean F1 over the nine thresholds 0.50..0.90."""
    missing = [t for t in THRESHOLDS if t not in results_by_tau]
    if missing:
        raise ValueError(f"missing thresholds {missing}")
    return sum(f1(results_by_tau[t]) for t in THRESHOLDS) / len(THRESHOLDS)


def evaluate(tables, thresholds=THRESHOLDS) -> dict[float, MatchResult]:
    """Micro-averaged matching over many images, given one IoU table per image."""
    totals = {t: MatchResult(0, 0, 0) for t in thresholds}
    for table in tables:
        for t in thresholds:
            totals[t] = totals[t] + match_table(table, t)
    return totals


def report(results_by_tau: dict[float, MatchResult]) -> dict:
    per_tau = {
        f"{t:.2f}": {
            "f1": f1(m),
            "precision": m.precision,
            "recall": m.recall,
            "tp": m.tp,
            "fp": m.fp,
            "fn": m.fn,
        }
        for t, m in sorted(results_by_tau.items())
    }
    out = {"thresholds": per_tau}
    if all(t in results_by_tau for t in THRESHOLDS):
        out["f1_avg"] = f1_avg(results_by_tau)
    return out
