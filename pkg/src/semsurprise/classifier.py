"""Tier classifiers over SSV features.

:class:`RiskClassifier` is a multinomial logistic regression on the chosen
SSV components plus their squares and pairwise products, fitted by
full-batch gradient descent. :func:`kmeans_baseline` clusters SSVs into three
groups and names each cluster after its majority tier.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .ssv import COMPONENTS

ALL_COMPONENTS = (0, 1, 2)


def parse_components(text: str) -> tuple[int, ...]:
    """'conf,novel' -> (0, 1). Accepts ``s_`` prefixes and ``all``."""
    if text.strip().lower() in ("all", "full"):
        return ALL_COMPONENTS
    names = {c: i for i, c in enumerate(COMPONENTS)}
    names.update({c[2:]: i for i, c in enumerate(COMPONENTS)})
    out = []
    for part in text.split(","):
        key = part.strip().lower()
        if key not in names:
            raise ValueError(f"unknown SSV component {part!r}")
        out.append(names[key])
    if not out or len(set(out)) != len(out):
        raise ValueError("components must be distinct and non-empty")
    return tuple(sorted(out))


def quadratic_features(ssvs, components=ALL_COMPONENTS) -> np.ndarray:
    """Selected columns, their squares, and their pairwise products."""
    X = np.asarray(ssvs, dtype=np.float64)[:, list(components)]
    cols = [X, X * X]
    for i, j in combinations(range(X.shape[1]), 2):
        cols.append((X[:, i] * X[:, j])[:, None])
    return np.column_stack(cols)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class RiskClassifier:
    components: tuple[int, ...]
    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray  # F x 3
    bias: np.ndarray  # 3
    loss_trace: tuple[float, ...] = ()

    def _design(self, ssvs):
        return (quadratic_features(ssvs, self.components) - self.mean) / self.scale

    def predict_proba(self, ssvs) -> np.ndarray:
        ssvs = np.asarray(ssvs, dtype=np.float64)
        if not np.all(np.isfinite(ssvs)):
            raise ValueError("non-finite SSV")
        return _softmax(self._design(ssvs) @ self.weights + self.bias)

    def predict(self, ssvs) -> np.ndarray:
        if len(ssvs) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.predict_proba(ssvs), axis=1).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, RiskClassifier):
            return NotImplemented
        return self.components == other.components and all(
            np.array_equal(a, b)
            for a, b in zip((self.mean, self.scale, self.weights, self.bias),
                            (other.mean, other.scale, other.weights, other.bias))
        )


def fit_classifier(ssvs, tiers, seed: int = 0, components=ALL_COMPONENTS, max_iters: int = 3000,
                   l2: float = 1e-4, tol: float = 1e-10, record_every: int = 50) -> RiskClassifier:
    """Fit by gradient descent with step 1/L, L the smoothness bound of the objective.

    With that step the objective never increases, so the recorded trace is
    monotone. Stops early when the relative decrease falls below ``tol``.
    """
    ssvs = np.asarray(ssvs, dtype=np.float64)
    y = np.asarray(tiers, dtype=np.int64)
    missing = sorted(set(range(3)) - set(np.unique(y).tolist()))
    if missing:
        raise ValueError(f"missing tier(s) {missing} in classifier training data")
    components = tuple(components)
    F = quadratic_features(ssvs, components)
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    X = (F - mean) / scale
    N, d = X.shape
    Xb = np.column_stack([X, np.ones(N)])
    Y = np.eye(3)[y]
    lip = 0.5 * np.linalg.eigvalsh(Xb.T @ Xb / N)[-1] + l2
    step = 1.0 / lip
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = rng.normal(scale=1e-3, size=(d + 1, 3))

    def objective(th):
        logits = Xb @ th
        m = logits.max(axis=1, keepdims=True)
        lse = (m[:, 0] + np.log(np.exp(logits - m).sum(axis=1)))
        nll = float(np.mean(lse - (logits * Y).sum(axis=1)))
        return nll + 0.5 * l2 * float(np.sum(th[:-1] ** 2))

    trace = [objective(theta)]
    prev = trace[0]
    for it in range(1, max_iters + 1):
        P = _softmax(Xb @ theta)
        grad = Xb.T @ (P - Y) / N
        grad[:-1] += l2 * theta[:-1]
        theta = theta - step * grad
        if it % record_every == 0 or it == max_iters:
            cur = objective(theta)
            trace.append(cur)
            if prev - cur <= tol * max(abs(prev), 1.0):
                break
            prev = cur
    return RiskClassifier(components, mean, scale, theta[:-1], theta[-1], tuple(trace))


def best_threshold_baseline(values, tiers) -> tuple[float, tuple[int, int], float]:
    """Best single-cut rule on one score, by macro F1.

    Scores below the cut get one tier, the rest another. Returns
    (threshold, (low tier, high tier), macro F1).
    """
    from .risk import f1_scores

    values = np.asarray(values, dtype=np.float64)
    tiers = np.asarray(tiers, dtype=np.int64)
    cuts = np.unique(values)
    best = (-np.inf, (0, 0), -1.0)
    for t in cuts:
        high = values >= t
        for lo in range(3):
            for hi in range(3):
                if lo == hi:
                    continue
                pred = np.where(high, hi, lo)
                macro = f1_scores(tiers, pred)[1]
                if macro > best[2]:
                    best = (float(t), (lo, hi), macro)
    return best


def _lloyd(X, centers, max_iters=300):
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        assign = np.argmin(d2, axis=1)
        counts = np.bincount(assign, minlength=len(centers))
        if (counts == 0).any():
            return None, None, None
        new = np.stack([X[assign == k].mean(axis=0) for k in range(len(centers))])
        if np.array_equal(new, centers):
            break
        centers = new
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    assign = np.argmin(d2, axis=1)
    return assign, centers, float(d2[np.arange(len(X)), assign].sum())


def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.asarray(centers)[None]) ** 2).sum(axis=-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.asarray(centers)


class DegenerateClusteringError(RuntimeError):
    pass


def kmeans(X, k=3, seed=0, n_init=10, max_reseeds=10):
    """Lloyd's algorithm with k-means++ starts; keeps the lowest-inertia run.

    Returns (assignments, centers, inertia). When every point coincides,
    all points go to cluster 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) < k:
        raise ValueError(f"need >= {k} samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    if np.all(X == X[0]):
        return np.zeros(len(X), dtype=np.int64), np.repeat(X[:1], k, axis=0), 0.0
    best = None
    failures = 0
    runs = 0
    while runs < n_init:
        assign, centers, inertia = _lloyd(X, _kmeans_pp(X, k, rng))
        if assign is None:
            failures += 1
            if failures > max_reseeds:
                raise DegenerateClusteringError("empty cluster after repeated reseeding")
            continue
        runs += 1
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    return best


def kmeans_baseline(ssvs, true_tiers, seed=0, standardize=True) -> np.ndarray:
    """3-means on SSVs, each cluster labelled with its majority true tier (ties -> lower tier)."""
    X = np.asarray(ssvs, dtype=np.float64)
    y = np.asarray(true_tiers, dtype=np.int64)
    if standardize:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)
    assign, _, _ = kmeans(X, 3, seed)
    pred = np.empty(len(X), dtype=np.int64)
    for k in np.unique(assign):
        members = assign == k
        votes = np.bincount(y[members], minlength=3)
        pred[members] = int(np.argmax(votes))
    return pred
