"""Semantic Surprise Vector probe.

conformity  Mahalanobis distance to the global ID Gaussian
novelty     distance to the nearest concept representative
ambiguity   nearest distance over the nearest distance to a representative
            of any *other* subclass
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import _backend
from .data import RiskTier

COMPONENTS = ("s_conf", "s_novel", "s_ambig")


class DegenerateAmbiguityWarning(RuntimeWarning):
    pass


class SurpriseVector(NamedTuple):
    s_conf: float
    s_novel: float
    s_ambig: float


@dataclass(frozen=True, eq=False)
class GlobalStats:
    mu: np.ndarray
    sigma: np.ndarray
    ridge: float
    cholesky: np.ndarray  # lower factor of sigma + ridge * I

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def regularized(self):
        return self.sigma + self.ridge * np.eye(self.dim)


def default_ridge(sigma) -> float:
    return 1e-3 * float(np.trace(sigma)) / sigma.shape[0]


def fit_global_stats(X, ridge: float | None = None) -> GlobalStats:
    """Mean and (population) covariance of ID training features.

    ``ridge=None`` uses 1e-3 * trace(cov) / D.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty N x D matrix")
    mu = X.mean(axis=0)
    Xc = X - mu
    sigma = Xc.T @ Xc / len(X)
    if ridge is None:
        ridge = default_ridge(sigma)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    try:
        L = linalg.cholesky(sigma + ridge * np.eye(len(mu)), lower=True)
    except linalg.LinAlgError:
        raise ValueError("singular covariance: increase ridge") from None
    return GlobalStats(mu, sigma, float(ridge), L)


def s_conf(z, stats: GlobalStats):
    """Mahalanobis distance; accepts one vector or an N x D batch."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != stats.dim:
        raise ValueError(f"dimension mismatch: {Z.shape[1]} vs {stats.dim}")
    y = linalg.solve_triangular(stats.cholesky, (Z - stats.mu).T, lower=True)
    d = np.sqrt(np.sum(y * y, axis=0))
    return float(d[0]) if single else d


@dataclass(frozen=True, eq=False)
class RepresentativeSet:
    representatives: np.ndarray
    subclass_of: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.representatives, dtype=np.float64)
        sub = np.asarray(self.subclass_of, dtype=np.int64)
        if R.ndim != 2 or len(R) == 0:
            raise ValueError("empty representative set")
        if sub.shape != (len(R),):
            raise ValueError("one subclass id per representative")
        object.__setattr__(self, "representatives", R)
        object.__setattr__(self, "subclass_of", sub)

    @classmethod
    def from_bank(cls, bank) -> "RepresentativeSet":
        return cls(bank.flat(), bank.flat_labels())

    @classmethod
    def from_centroids(cls, centroids) -> "RepresentativeSet":
        return cls(centroids, np.arange(len(centroids)))


def _nearest(z, reps: RepresentativeSet):
    Z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if Z.shape[1] != reps.representatives.shape[1]:
        raise ValueError("dimension mismatch")
    return _backend.nearest_two(Z, reps.representatives, reps.subclass_of)


def s_novel(z, reps: RepresentativeSet):
    d1, _, _ = _nearest(z, reps)
    return float(d1[0]) if np.ndim(z) == 1 else d1


def _ratio(d1, d2):
    if np.isinf(d2).any():
        raise ValueError("ambiguity needs representatives from >= 2 subclasses")
    degenerate = d2 == 0
    if degenerate.any():
        warnings.warn("degenerate ambiguity: sample coincides with representatives of two classes",
                      DegenerateAmbiguityWarning, stacklevel=3)
    return np.where(degenerate, 1.0, d1 / np.where(degenerate, 1.0, d2))


def s_ambig(z, reps: RepresentativeSet):
    d1, d2, _ = _nearest(z, reps)
    r = _ratio(d1, d2)
    return float(r[0]) if np.ndim(z) == 1 else r


def probe(X, stats: GlobalStats, reps: RepresentativeSet) -> np.ndarray:
    """N x 3 array of (s_conf, s_novel, s_ambig), row order preserved."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros((0, 3))
    d1, d2, _ = _nearest(X, reps)
    return np.column_stack([s_conf(X, stats), d1, _ratio(d1, d2)])


def write_ssv_csv(path, ssvs, tiers) -> None:
    """Write ``s_conf,s_novel,s_ambig,risk_tier`` rows (tier as ID/Near/Far)."""
    ssvs = np.asarray(ssvs, dtype=np.float64)
    tiers = np.broadcast_to(np.asarray(tiers), (len(ssvs),))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*COMPONENTS, "risk_tier"])
        for row, t in zip(ssvs, tiers):
            w.writerow([repr(float(v)) for v in row] + [RiskTier(int(t)).label])


def read_ssv_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [*COMPONENTS, "risk_tier"]:
            raise ValueError(f"{path}: expected header {','.join(COMPONENTS)},risk_tier")
        rows, tiers = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns")
            rows.append([float(x) for x in row[:3]])
            tiers.append(int(RiskTier.parse(row[3])))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3), np.asarray(tiers, dtype=np.int64)


def ssv_path_for(out_dir, name) -> Path:
    return Path(out_dir) / f"{name}.ssv.csv"
