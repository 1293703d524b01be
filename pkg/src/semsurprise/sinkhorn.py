"""Balanced soft assignment of samples to a class's prototypes.

Entropic optimal transport between a uniform sample marginal and a uniform
prototype marginal, cost = -cosine similarity, solved with log-domain
Sinkhorn-Knopp iterations. The plan is rescaled by B so each row is a
probability vector over the K prototypes and each column carries B/K mass.
The solve is per batch; no state is carried between calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

DEFAULT_EPSILON = 0.05
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class AssignmentMatrix:
    weights: np.ndarray
    epsilon: float
    iterations_run: int

    @property
    def shape(self):
        return self.weights.shape


def assign(similarities, epsilon: float = DEFAULT_EPSILON, max_iters: int = DEFAULT_MAX_ITERS,
           tol: float = DEFAULT_TOL) -> AssignmentMatrix:
    sim = np.asarray(similarities, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] < 1 or sim.shape[1] < 1:
        raise ValueError("similarities must be a non-empty B x K matrix")
    if not np.all(np.isfinite(sim)):
        raise ValueError("non-finite similarities")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    B, K = sim.shape
    if K == 1:
        return AssignmentMatrix(np.ones((B, 1)), float(epsilon), 0)
    weights, iters = _backend.sinkhorn_log(sim, epsilon, max_iters, tol)
    return AssignmentMatrix(weights, float(epsilon), int(iters))


def assign_per_class(z, labels, prototypes, epsilon=DEFAULT_EPSILON, max_iters=DEFAULT_MAX_ITERS,
                     tol=DEFAULT_TOL) -> dict[int, AssignmentMatrix]:
    """Run :func:`assign` for every class present in ``labels``.

    Rows of each matrix follow the order of ``np.flatnonzero(labels == c)``.
    """
    out = {}
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        out[int(c)] = assign(z[members] @ prototypes[c].T, epsilon, max_iters, tol)
    return out


def full_weights(labels, assignments: dict[int, AssignmentMatrix], num_classes: int, K: int) -> np.ndarray:
    """B x C x K mixture weights: Sinkhorn rows for the own class, 1/K elsewhere.

    The posterior's denominator needs weights for every class, but assignment
    is only solved against the sample's ground-truth class.
    """
    labels = np.asarray(labels)
    W = np.full((len(labels), num_classes, K), 1.0 / K)
    for c, a in assignments.items():
        members = np.flatnonzero(labels == c)
        W[members, c, :] = a.weights
    return W
