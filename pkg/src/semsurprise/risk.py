"""Ternary risk evaluation: cost-normalized risk, F1, confusion, binary OOD metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import RiskTier

TIERS = (RiskTier.ID, RiskTier.NEAR, RiskTier.FAR)
TIER_LABELS = tuple(t.label for t in TIERS)

# off-diagonal entries other than (Near, ID) and (Far, ID) are configurable defaults
DEFAULT_COSTS = np.array(
    [
        [0.0, 1.0, 2.0],
        [5.0, 0.0, 1.0],
        [6.0, 2.0, 0.0],
    ]
)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """3 x 3 costs, rows = true tier, columns = predicted tier."""

    costs: np.ndarray

    def __post_init__(self):
        c = np.array(self.costs, dtype=np.float64)
        if c.shape != (3, 3):
            raise ValueError("cost matrix must be 3 x 3")
        if (c < 0).any():
            raise ValueError("costs must be nonnegative")
        if np.any(np.diag(c) != 0):
            raise ValueError("diagonal costs must be 0")
        if c[RiskTier.NEAR, RiskTier.ID] != 5 or c[RiskTier.FAR, RiskTier.ID] != 6:
            raise ValueError("C(Near, ID) must be 5 and C(Far, ID) must be 6")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @classmethod
    def default(cls) -> "CostMatrix":
        return cls(DEFAULT_COSTS)

    def __eq__(self, other):
        return isinstance(other, CostMatrix) and np.array_equal(self.costs, other.costs)


def load_cost_matrix(path) -> CostMatrix:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) != 4 or [h.strip() for h in rows[0][1:]] != list(TIER_LABELS):
        raise ValueError(f"{path}: expected header ',ID,Near,Far' and three rows")
    costs = np.zeros((3, 3))
    for i, row in enumerate(rows[1:]):
        if row[0].strip() != TIER_LABELS[i] or len(row) != 4:
            raise ValueError(f"{path}: row {i + 2} must start with {TIER_LABELS[i]}")
        costs[i] = [float(x) for x in row[1:]]
    return CostMatrix(costs)


def save_cost_matrix(cost: CostMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *TIER_LABELS])
        for label, row in zip(TIER_LABELS, cost.costs):
            w.writerow([label, *(repr(float(v)) for v in row)])


def _tiers(a):
    a = np.asarray(a, dtype=np.int64)
    if a.size and (a.min() < 0 or a.max() > 2):
        raise ValueError("tiers must be 0 (ID), 1 (Near) or 2 (Far)")
    return a


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    t, p = _tiers(y_true), _tiers(y_pred)
    if t.shape != p.shape:
        raise ValueError("prediction/truth length mismatch")
    cm = np.zeros((3, 3), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def nsr(y_true, y_pred, cost: CostMatrix | None = None) -> float:
    """Total cost over the cost of always predicting ID (5 N_near + 6 N_far)."""
    cost = cost or CostMatrix.default()
    cm = confusion_matrix(y_true, y_pred)
    n_near, n_far = cm[RiskTier.NEAR].sum(), cm[RiskTier.FAR].sum()
    denom = 5 * n_near + 6 * n_far
    if denom == 0:
        raise ValueError("nSR undefined without OOD samples")
    return float((cm * cost.costs).sum() / denom)


def f1_scores(y_true, y_pred) -> tuple[np.ndarray, float]:
    """Per-tier F1 (0 when undefined) and their unweighted mean."""
    cm = confusion_matrix(y_true, y_pred).astype(np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    per = np.divide(2 * tp, denom, out=np.zeros(3), where=denom > 0)
    return per, float(per.mean())


macro_f1 = f1_scores


def auroc(id_scores, ood_scores, higher_is_ood=True) -> float:
    id_s, ood_s = _scores(id_scores, ood_scores, higher_is_ood)
    ranks = rankdata(np.concatenate([id_s, ood_s]))
    n_id, n_ood = len(id_s), len(ood_s)
    u = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2
    return float(u / (n_id * n_ood))


def fpr_at_tpr(id_scores, ood_scores, higher_is_ood=True, tpr=0.95) -> float:
    """FPR at the largest threshold whose OOD recall is still >= ``tpr``.

    OOD is predicted when score >= threshold.
    """
    id_s, ood_s = _scores(id_scores, ood_scores, higher_is_ood)
    ood_sorted = np.sort(ood_s)[::-1]
    # the k-th largest OOD score is the highest threshold catching k OOD samples
    k = int(np.ceil(tpr * len(ood_s) - 1e-12))
    k = min(max(k, 1), len(ood_s))
    thr = ood_sorted[k - 1]
    return float(np.mean(id_s >= thr))


def binary_metrics(id_scores, ood_scores, higher_is_ood=True) -> tuple[float, float]:
    """(FPR at 95% TPR, AUROC) with OOD as the positive class."""
    return fpr_at_tpr(id_scores, ood_scores, higher_is_ood), auroc(id_scores, ood_scores, higher_is_ood)


def _scores(id_scores, ood_scores, higher_is_ood):
    id_s = np.asarray(id_scores, dtype=np.float64).ravel()
    ood_s = np.asarray(ood_scores, dtype=np.float64).ravel()
    if len(id_s) == 0 or len(ood_s) == 0:
        raise ValueError("both score lists must be non-empty")
    if not (np.all(np.isfinite(id_s)) and np.all(np.isfinite(ood_s))):
        raise ValueError("non-finite scores")
    return (id_s, ood_s) if higher_is_ood else (-id_s, -ood_s)


@dataclass(frozen=True)
class EvaluationReport:
    nsr: float
    f1: tuple[float, float, float]
    macro_f1: float
    confusion: np.ndarray
    fpr95: float | None = None
    auroc: float | None = None


def evaluate_predictions(y_true, y_pred, cost: CostMatrix | None = None) -> EvaluationReport:
    per, macro = f1_scores(y_true, y_pred)
    return EvaluationReport(nsr(y_true, y_pred, cost), tuple(float(x) for x in per), macro,
                            confusion_matrix(y_true, y_pred))


def stratified_split(tiers, test_fraction: float, seed: int):
    """Index arrays (train, test) with each tier split in the same proportion."""
    tiers = np.asarray(tiers)
    rng = np.random.Generator(np.random.PCG64(seed))
    train, test = [], []
    for t in range(3):
        idx = np.flatnonzero(tiers == t)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
