"""Synthetic hierarchical embeddings on the unit sphere.

Every subclass is a cap around a center direction. Sibling centers sit at a
fixed angle from their superclass center along mutually orthogonal tangent
directions; one extra sibling direction per superclass is held out as
Near-OOD. Far-OOD caps sit at least ``superclass_offset`` away from every
superclass center.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import EmbeddingSet, LabelHierarchy, RiskTier

_MAX_REJECTION_TRIES = 100_000


@dataclass(frozen=True)
class SyntheticSpec:
    num_superclasses: int = 4
    subclasses_per_superclass: int = 3
    samples_per_subclass: int = 80
    dim: int = 16
    # RMS angular radius (radians) of each cap
    intra_spread: float = 0.25
    sibling_offset: float = 0.6
    superclass_offset: float = 1.2
    seed: int = 0
    held_out_per_superclass: int = 1
    num_far_clusters: int = 4
    test_samples_per_subclass: int = 40

    def validate(self) -> None:
        if self.dim < 3:
            raise ValueError("dim must be >= 3")
        counts = (
            self.num_superclasses,
            self.subclasses_per_superclass,
            self.samples_per_subclass,
            self.held_out_per_superclass,
            self.num_far_clusters,
            self.test_samples_per_subclass,
        )
        if min(counts) <= 0:
            raise ValueError("counts must be positive")
        if min(self.intra_spread, self.sibling_offset, self.superclass_offset) < 0:
            raise ValueError("angular scales must be nonnegative")
        if not self.intra_spread < self.sibling_offset < self.superclass_offset:
            raise ValueError("need intra_spread < sibling_offset < superclass_offset")
        if self.subclasses_per_superclass + self.held_out_per_superclass > self.dim - 1:
            raise ValueError("dim too small for orthogonal sibling directions")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticData:
    train: EmbeddingSet
    id_test: EmbeddingSet
    near_ood: EmbeddingSet
    far_ood: EmbeddingSet
    hierarchy: LabelHierarchy

    def __iter__(self):
        return iter((self.train, self.id_test, self.near_ood, self.far_ood, self.hierarchy))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _tangent_basis(rng, center, n):
    """n orthonormal directions orthogonal to ``center``."""
    D = center.shape[0]
    A = rng.standard_normal((D, n))
    A -= np.outer(center, center @ A)
    Q, _ = np.linalg.qr(A)
    return Q[:, :n].T


def _rotate(center, direction, angle):
    return np.cos(angle) * center + np.sin(angle) * direction


def _sample_cap(rng, center, spread, n):
    D = center.shape[0]
    if spread == 0.0:
        return np.tile(center, (n, 1))
    g = rng.standard_normal((n, D)) * (spread / np.sqrt(D - 1))
    g -= np.outer(g @ center, center)
    theta = np.linalg.norm(g, axis=1)
    safe = np.where(theta > 0, theta, 1.0)
    out = np.cos(theta)[:, None] * center + (np.sin(theta) / safe)[:, None] * g
    return _unit(out)


def _spread_directions(rng, D, n, min_angle, avoid=None):
    """Rejection-sample n unit vectors pairwise (and vs ``avoid``) >= min_angle apart."""
    cos_max = np.cos(min_angle)
    chosen = []
    fixed = [] if avoid is None else list(avoid)
    tries = 0
    while len(chosen) < n:
        tries += 1
        if tries > _MAX_REJECTION_TRIES:
            raise RuntimeError("could not place directions; lower superclass_offset or raise dim")
        v = _unit(rng.standard_normal(D))
        others = chosen + fixed
        if others and np.max(np.asarray(others) @ v) > cos_max:
            continue
        chosen.append(v)
    return np.asarray(chosen)


def generate_synthetic(spec: SyntheticSpec | None = None) -> SyntheticData:
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    D = spec.dim
    M = spec.num_superclasses
    S = spec.subclasses_per_superclass

    super_centers = _spread_directions(rng, D, M, spec.superclass_offset)
    sub_centers, near_centers, pairs = [], [], []
    for m in range(M):
        tangents = _tangent_basis(rng, super_centers[m], S + spec.held_out_per_superclass)
        for s in range(S):
            sub_centers.append(_rotate(super_centers[m], tangents[s], spec.sibling_offset))
            pairs.append((f"super{m}_sub{s}", f"super{m}"))
        for h in range(spec.held_out_per_superclass):
            near_centers.append(_rotate(super_centers[m], tangents[S + h], spec.sibling_offset))
    far_centers = _spread_directions(rng, D, spec.num_far_clusters, spec.superclass_offset, avoid=super_centers)
    hierarchy = LabelHierarchy.from_pairs(pairs)

    def draw(centers, n):
        return np.concatenate([_sample_cap(rng, c, spec.intra_spread, n) for c in centers])

    C = len(sub_centers)
    train_x = draw(sub_centers, spec.samples_per_subclass)
    train_y = np.repeat(np.arange(C), spec.samples_per_subclass)
    test_x = draw(sub_centers, spec.test_samples_per_subclass)
    test_y = np.repeat(np.arange(C), spec.test_samples_per_subclass)
    near_x = draw(near_centers, spec.test_samples_per_subclass)
    far_x = draw(far_centers, spec.test_samples_per_subclass)

    def as_set(x, y, tier, name):
        return EmbeddingSet(x.astype(np.float32), y, tier, True, name=name)

    return SyntheticData(
        train=as_set(train_x, train_y, RiskTier.ID, "train"),
        id_test=as_set(test_x, test_y, RiskTier.ID, "id_test"),
        near_ood=as_set(near_x, None, RiskTier.NEAR, "near_ood"),
        far_ood=as_set(far_x, None, RiskTier.FAR, "far_ood"),
        hierarchy=hierarchy,
    )
