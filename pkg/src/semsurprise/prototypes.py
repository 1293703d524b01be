"""Prototype bank: K unit-norm prototypes per subclass, maintained by EMA."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import FormatError, LabelHierarchy

DEFAULT_ALPHA = 0.999
DEGENERATE_NORM = 1e-12

_PBANK_MAGIC = b"PBNK"
_PBANK_VERSION = 1
# magic, version, C, K, D, alpha, hierarchy checksum
_PBANK_HEADER = struct.Struct("<4sHIII d16s")


class DegenerateUpdateWarning(RuntimeWarning):
    """An EMA target vector had (near) zero norm; the previous prototype was kept."""


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    prototypes: np.ndarray  # C x K x D
    alpha: float
    hierarchy: LabelHierarchy

    def __post_init__(self):
        p = np.array(self.prototypes, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError("prototypes must be C x K x D")
        if p.shape[0] != self.hierarchy.num_subclasses:
            raise ValueError("prototype count does not match hierarchy")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "prototypes", p)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def K(self) -> int:
        return self.prototypes.shape[1]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[2]

    def flat(self) -> np.ndarray:
        return self.prototypes.reshape(-1, self.dim)

    def flat_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_classes), self.K)

    def with_prototypes(self, prototypes) -> "PrototypeBank":
        return replace(self, prototypes=prototypes)

    def __eq__(self, other):
        if not isinstance(other, PrototypeBank):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and self.hierarchy == other.hierarchy
            and np.array_equal(self.prototypes, other.prototypes)
        )


def init_prototypes(hierarchy: LabelHierarchy, K: int, dim: int, seed: int, alpha: float = DEFAULT_ALPHA) -> PrototypeBank:
    if K < 1:
        raise ValueError("K must be >= 1")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    g = rng.standard_normal((hierarchy.num_subclasses, K, dim))
    return PrototypeBank(g / np.linalg.norm(g, axis=-1, keepdims=True), alpha, hierarchy)


def ema_targets(z, labels, own_weights, num_classes: int) -> np.ndarray:
    """Per-prototype assignment-weighted embedding sums, C x K x D."""
    K = own_weights.shape[1]
    T = np.zeros((num_classes, K, z.shape[1]))
    for c in np.unique(labels):
        members = labels == c
        T[c] = own_weights[members].T @ z[members]
    return T


def ema_update(bank: PrototypeBank, z, labels, own_weights) -> PrototypeBank:
    """One EMA step on the bank.

    ``own_weights`` is B x K: row i holds sample i's assignment over the
    prototypes of its own class. Classes absent from the batch are untouched.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    own_weights = np.asarray(own_weights, dtype=np.float64)
    if own_weights.shape != (len(labels), bank.K):
        raise ValueError("assignments must be B x K and row-aligned with the batch")
    if bank.alpha == 1.0:
        # full decay: skip the renormalization so the bank is bit-identical
        return bank
    present = np.unique(labels)
    T = ema_targets(z, labels, own_weights, bank.num_classes)
    new = np.array(bank.prototypes)
    v = bank.alpha * bank.prototypes[present] + (1.0 - bank.alpha) * T[present]
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = norms > DEGENERATE_NORM
    if not ok.all():
        warnings.warn("degenerate update: zero vector before normalization", DegenerateUpdateWarning, stacklevel=2)
    new[present] = np.where(ok, v / np.where(ok, norms, 1.0), bank.prototypes[present])
    return bank.with_prototypes(new)


def ema_update_from_assignments(bank: PrototypeBank, z, labels, assignments) -> PrototypeBank:
    """Same as :func:`ema_update` but takes the per-class ``assign_per_class`` output."""
    labels = np.asarray(labels)
    own = np.zeros((len(labels), bank.K))
    for c, a in assignments.items():
        own[np.flatnonzero(labels == c)] = a.weights
    return ema_update(bank, z, labels, own)


def class_centroids(vectors, labels, num_classes: int) -> np.ndarray:
    """Per-class mean, renormalized to unit length (C x D)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError(f"empty class {int(np.flatnonzero(counts == 0)[0])}")
    sums = np.zeros((num_classes, vectors.shape[1]))
    np.add.at(sums, labels, vectors)
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1)
    if (norms <= DEGENERATE_NORM).any():
        raise ValueError(f"degenerate centroid for class {int(np.flatnonzero(norms <= DEGENERATE_NORM)[0])}")
    return means / norms[:, None]


def save_bank(bank: PrototypeBank, path) -> None:
    C, K, D = bank.prototypes.shape
    header = _PBANK_HEADER.pack(_PBANK_MAGIC, _PBANK_VERSION, C, K, D, float(bank.alpha), bank.hierarchy.checksum())
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bank.prototypes, dtype="<f8").tobytes())


def load_bank(path, hierarchy: LabelHierarchy) -> PrototypeBank:
    raw = Path(path).read_bytes()
    if len(raw) < _PBANK_HEADER.size:
        raise FormatError(f"{path}: malformed header")
    magic, version, C, K, D, alpha, checksum = _PBANK_HEADER.unpack_from(raw)
    if magic != _PBANK_MAGIC or version != _PBANK_VERSION:
        raise FormatError(f"{path}: malformed header")
    if checksum != hierarchy.checksum():
        raise FormatError(f"{path}: hierarchy checksum mismatch")
    if len(raw) != _PBANK_HEADER.size + C * K * D * 8:
        raise FormatError(f"{path}: dimension mismatch")
    p = np.frombuffer(raw, dtype="<f8", offset=_PBANK_HEADER.size).reshape(C, K, D)
    return PrototypeBank(p.copy(), alpha, hierarchy)
