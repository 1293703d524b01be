"""Manifold health metrics.

compactness
    mean same-subclass pair distance, averaged per subclass then across
    subclasses
cohesion
    mean distance over pairs from different subclasses of one superclass,
    averaged per superclass then across superclasses
separation
    mean distance over all pairs from different superclasses
prototype angles
    mean pairwise angle between prototypes of sibling subclasses (intra)
    and of different superclasses (inter), in degrees

All distances are Euclidean. The exact scans go through the grouped
pair-distance kernel; ``sample_pairs`` switches to uniform pair sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import _backend
from .data import LabelHierarchy


@dataclass(frozen=True)
class ManifoldReport:
    compactness: float
    cohesion: float
    separation: float
    intra_super_angle_deg: float
    inter_super_angle_deg: float
    source: str = "id_test"
    pair_sample_seed: int | None = None

    def as_dict(self):
        return asdict(self)


def _sup_array(hierarchy):
    if isinstance(hierarchy, LabelHierarchy):
        return hierarchy.superclass_array
    return np.asarray(hierarchy, dtype=np.int64)


def _pair_stats(X, labels, num_groups, sample_pairs=None, seed=0):
    """(sum matrix, count matrix) over unordered pairs, grouped by subclass."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if sample_pairs is None:
        sums = _backend.group_distance_sums(X, labels, num_groups)
        n = np.bincount(labels, minlength=num_groups).astype(np.float64)
        counts = np.outer(n, n)
        np.fill_diagonal(counts, n * (n - 1) / 2)
        return sums, counts
    rng = np.random.Generator(np.random.PCG64(seed))
    N = len(X)
    i = rng.integers(0, N, size=sample_pairs)
    j = rng.integers(0, N - 1, size=sample_pairs)
    j = np.where(j >= i, j + 1, j)
    d = np.linalg.norm(X[i] - X[j], axis=1)
    a, b = labels[i], labels[j]
    sums = np.zeros((num_groups, num_groups))
    counts = np.zeros((num_groups, num_groups))
    np.add.at(sums, (a, b), d)
    np.add.at(counts, (a, b), 1.0)
    diag_s, diag_c = np.diag(sums).copy(), np.diag(counts).copy()
    sums, counts = sums + sums.T, counts + counts.T
    np.fill_diagonal(sums, diag_s)
    np.fill_diagonal(counts, diag_c)
    return sums, counts


def _num_groups(labels, hierarchy=None):
    if hierarchy is not None:
        return len(_sup_array(hierarchy))
    return int(np.max(labels)) + 1 if len(labels) else 0


def compactness(X, labels, sample_pairs=None, seed=0) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    G = _num_groups(labels)
    sums, counts = _pair_stats(X, labels, G, sample_pairs, seed)
    d, c = np.diag(sums), np.diag(counts)
    ok = c > 0
    if not ok.any():
        raise ValueError("compactness needs a subclass with >= 2 samples")
    return float(np.mean(d[ok] / c[ok]))


def cohesion(X, labels, hierarchy, sample_pairs=None, seed=0) -> float:
    sup = _sup_array(hierarchy)
    labels = np.asarray(labels, dtype=np.int64)
    sums, counts = _pair_stats(X, labels, len(sup), sample_pairs, seed)
    upper = np.triu(np.ones_like(sums, dtype=bool), k=1)
    per_super = []
    for m in np.unique(sup):
        mask = upper & (sup[:, None] == m) & (sup[None, :] == m)
        c = counts[mask].sum()
        if c > 0:
            per_super.append(sums[mask].sum() / c)
    if not per_super:
        raise ValueError("cohesion needs a superclass with >= 2 populated subclasses")
    return float(np.mean(per_super))


def separation(X, labels, hierarchy, sample_pairs=None, seed=0) -> float:
    sup = _sup_array(hierarchy)
    labels = np.asarray(labels, dtype=np.int64)
    sums, counts = _pair_stats(X, labels, len(sup), sample_pairs, seed)
    mask = np.triu(sup[:, None] != sup[None, :], k=1)
    c = counts[mask].sum()
    if c == 0:
        raise ValueError("separation needs >= 2 populated superclasses")
    return float(sums[mask].sum() / c)


def prototype_angles(prototypes, hierarchy) -> tuple[float, float]:
    """(intra, inter) mean prototype angles in degrees."""
    P = np.asarray(prototypes, dtype=np.float64)
    C, K, D = P.shape
    sup = np.repeat(_sup_array(hierarchy), K)
    cls = np.repeat(np.arange(C), K)
    if len(np.unique(sup)) < 2:
        raise ValueError("inter undefined: single superclass")
    F = P.reshape(C * K, D)
    ang = np.degrees(np.arccos(np.clip(F @ F.T, -1.0, 1.0)))
    upper = np.triu(np.ones((C * K, C * K), dtype=bool), k=1)
    intra_mask = upper & (sup[:, None] == sup[None, :]) & (cls[:, None] != cls[None, :])
    inter_mask = upper & (sup[:, None] != sup[None, :])
    intra = float(ang[intra_mask].mean()) if intra_mask.any() else float("nan")
    return intra, float(ang[inter_mask].mean())


def manifold_report(X, labels, hierarchy, prototypes, source="id_test", sample_pairs=None, seed=0) -> ManifoldReport:
    intra, inter = prototype_angles(prototypes, hierarchy)
    return ManifoldReport(
        compactness=compactness(X, labels, sample_pairs, seed),
        cohesion=cohesion(X, labels, hierarchy, sample_pairs, seed),
        separation=separation(X, labels, hierarchy, sample_pairs, seed),
        intra_super_angle_deg=intra,
        inter_super_angle_deg=inter,
        source=source,
        pair_sample_seed=seed if sample_pairs is not None else None,
    )
