"""Label hierarchy, embedding sets and their on-disk formats.

Formats
-------
``.hier``
    One ``subclass<TAB>superclass`` pair per line. Subclass ids follow line
    order; superclass ids follow order of first appearance.
``.semb``
    Little-endian binary: a fixed header (magic ``SEMB``, version, dtype code,
    risk tier, normalized flag, has-labels flag, N, D) followed by the
    row-major N x D payload and, for labelled sets, N int32 labels.
CSV import
    First line ``dim=D``; then ``label,v0,...,vD-1`` rows, ``-`` for no label.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORM_TOL = 1e-6
RENORM_BAND = 1e-3

_SEMB_MAGIC = b"SEMB"
_SEMB_VERSION = 1
# magic, version, dtype code, tier, normalized, has_labels, N, D
_SEMB_HEADER = struct.Struct("<4sHBBBBQI")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    """Malformed or inconsistent embedding/hierarchy file."""


class RiskTier(enum.IntEnum):
    ID = 0
    NEAR = 1
    FAR = 2

    @classmethod
    def parse(cls, text: str) -> "RiskTier":
        key = text.strip().lower()
        aliases = {
            "id": cls.ID,
            "near": cls.NEAR,
            "nearood": cls.NEAR,
            "near_ood": cls.NEAR,
            "far": cls.FAR,
            "farood": cls.FAR,
            "far_ood": cls.FAR,
        }
        if key not in aliases:
            raise ValueError(f"unknown risk tier {text!r}")
        return aliases[key]

    @property
    def label(self) -> str:
        return ("ID", "Near", "Far")[self.value]


@dataclass(frozen=True)
class LabelHierarchy:
    """Two-level label map: subclass id -> superclass id."""

    subclass_names: tuple[str, ...]
    superclass_of: tuple[int, ...]
    superclass_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.subclass_names) != len(self.superclass_of):
            raise ValueError("every subclass needs exactly one superclass")
        M = len(self.superclass_names)
        for s in self.superclass_of:
            if not 0 <= s < M:
                raise ValueError(f"superclass id {s} outside [0, {M})")
        if sorted(set(self.superclass_of)) != list(range(M)):
            raise ValueError("superclass ids must be dense")
        if len(set(self.subclass_names)) != len(self.subclass_names):
            raise ValueError("duplicate subclass name")

    @property
    def num_subclasses(self) -> int:
        return len(self.subclass_names)

    @property
    def num_superclasses(self) -> int:
        return len(self.superclass_names)

    @property
    def superclass_array(self) -> np.ndarray:
        return np.asarray(self.superclass_of, dtype=np.int64)

    def siblings(self, c: int) -> list[int]:
        m = self.superclass_of[c]
        return [j for j, s in enumerate(self.superclass_of) if s == m and j != c]

    def check_hierarchy_loss(self) -> None:
        """Raise unless every superclass has at least two subclasses."""
        counts = np.bincount(self.superclass_array, minlength=self.num_superclasses)
        lonely = [self.superclass_names[m] for m in np.flatnonzero(counts < 2)]
        if lonely:
            raise ValueError(f"no siblings for superclass(es) {lonely}; hierarchy loss needs >= 2 subclasses each")

    @classmethod
    def from_pairs(cls, pairs) -> "LabelHierarchy":
        subs, supers, sup_names = [], [], []
        index = {}
        for sub, sup in pairs:
            if sup not in index:
                index[sup] = len(sup_names)
                sup_names.append(sup)
            subs.append(sub)
            supers.append(index[sup])
        return cls(tuple(subs), tuple(supers), tuple(sup_names))

    def to_text(self) -> str:
        return "".join(
            f"{s}\t{self.superclass_names[m]}\n" for s, m in zip(self.subclass_names, self.superclass_of)
        )

    def checksum(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()[:16]


def load_hierarchy(path) -> LabelHierarchy:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError(f"{path}:{lineno}: expected 'subclass<TAB>superclass'")
        pairs.append((parts[0].strip(), parts[1].strip()))
    if not pairs:
        raise FormatError(f"{path}: empty hierarchy")
    return LabelHierarchy.from_pairs(pairs)


def save_hierarchy(hierarchy: LabelHierarchy, path) -> None:
    Path(path).write_text(hierarchy.to_text(), encoding="utf-8")


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """N x D feature matrix with optional subclass labels and a risk tier.

    Labels are present exactly when the tier is ``RiskTier.ID``.
    """

    vectors: np.ndarray
    labels: np.ndarray | None
    risk_tier: RiskTier = RiskTier.ID
    normalized: bool = True
    name: str = field(default="", compare=False)

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if v.dtype not in _DTYPE_CODES:
            v = v.astype(np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "risk_tier", RiskTier(self.risk_tier))
        if (self.labels is not None) != (self.risk_tier == RiskTier.ID):
            raise ValueError("labels must be present iff risk_tier is ID")
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (v.shape[0],):
                raise ValueError("one label per row required")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)
        if self.normalized and len(v):
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            if not np.all(np.abs(norms - 1.0) <= NORM_TOL):
                raise ValueError("norm violation: rows declared normalized are not unit length")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def as_float64(self) -> np.ndarray:
        return np.asarray(self.vectors, dtype=np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels)
        )
        return (
            self.risk_tier == other.risk_tier
            and self.normalized == other.normalized
            and self.vectors.dtype == other.vectors.dtype
            and np.array_equal(self.vectors, other.vectors)
            and same_labels
        )


def _validate_labels(labels, hierarchy: LabelHierarchy | None):
    if labels is None or hierarchy is None:
        return
    bad = labels[(labels < 0) | (labels >= hierarchy.num_subclasses)]
    if bad.size:
        raise FormatError(f"unknown subclass id {int(bad[0])}")


def _renormalize(vectors: np.ndarray) -> np.ndarray:
    """Apply the load-time tolerance band to rows declared unit-norm."""
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    dev = np.abs(norms - 1.0)
    if dev.size and not np.all(dev < RENORM_BAND):
        i = int(np.argmax(np.where(np.isnan(dev), np.inf, dev)))
        raise FormatError(f"norm violation at row {i}: norm {norms[i]:.6g}")
    off = dev > NORM_TOL
    if off.any():
        vectors = vectors.copy()
        vectors[off] = (vectors[off] / norms[off, None]).astype(vectors.dtype)
    return vectors


def save_embeddings(emb: EmbeddingSet, path) -> None:
    v = np.ascontiguousarray(emb.vectors)
    dt = v.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {v.dtype}")
    has_labels = emb.labels is not None
    header = _SEMB_HEADER.pack(
        _SEMB_MAGIC,
        _SEMB_VERSION,
        _DTYPE_CODES[dt],
        int(emb.risk_tier),
        int(emb.normalized),
        int(has_labels),
        v.shape[0],
        v.shape[1],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(v.astype(dt, copy=False).tobytes(order="C"))
        if has_labels:
            fh.write(np.asarray(emb.labels, dtype="<i4").tobytes())


def load_embeddings(path, hierarchy: LabelHierarchy | None = None) -> EmbeddingSet:
    raw = Path(path).read_bytes()
    if len(raw) < _SEMB_HEADER.size:
        raise FormatError(f"{path}: malformed header (file too short)")
    magic, version, dcode, tier, normalized, has_labels, N, D = _SEMB_HEADER.unpack_from(raw)
    if magic != _SEMB_MAGIC:
        raise FormatError(f"{path}: malformed header (bad magic {magic!r})")
    if version != _SEMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dcode not in _DTYPES or tier > 2 or D == 0:
        raise FormatError(f"{path}: malformed header")
    dt = _DTYPES[dcode]
    off = _SEMB_HEADER.size
    payload = N * D * dt.itemsize
    expected = off + payload + (4 * N if has_labels else 0)
    if len(raw) != expected:
        raise FormatError(f"{path}: dimension mismatch (expected {expected} bytes, got {len(raw)})")
    vectors = np.frombuffer(raw, dtype=dt, count=N * D, offset=off).reshape(N, D).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<i4", count=N, offset=off + payload).astype(np.int64)
    _validate_labels(labels, hierarchy)
    if normalized:
        vectors = _renormalize(vectors)
    return EmbeddingSet(vectors, labels, RiskTier(tier), bool(normalized), name=Path(path).stem)


def load_csv(path, hierarchy: LabelHierarchy | None = None, risk_tier: RiskTier | None = None,
             normalized: bool = True) -> EmbeddingSet:
    """Import ``label,v0,...`` rows. Labels may be subclass ids or names."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("dim="):
        raise FormatError(f"{path}: malformed header, expected 'dim=D'")
    try:
        D = int(lines[0][4:])
    except ValueError:
        raise FormatError(f"{path}: malformed header {lines[0]!r}") from None
    names = {n: i for i, n in enumerate(hierarchy.subclass_names)} if hierarchy else {}
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], 2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != D + 1:
            raise FormatError(f"{path}:{lineno}: dimension mismatch ({len(parts) - 1} values, dim={D})")
        tag = parts[0]
        if tag == "-":
            labels.append(None)
        elif tag in names:
            labels.append(names[tag])
        else:
            try:
                labels.append(int(tag))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unknown subclass {tag!r}") from None
        rows.append([float(x) for x in parts[1:]])
    vectors = np.asarray(rows, dtype=np.float64).reshape(len(rows), D)
    has = [lab is not None for lab in labels]
    if any(has) and not all(has):
        raise FormatError(f"{path}: mixed labelled and unlabelled rows")
    lab_arr = np.asarray(labels, dtype=np.int64) if (has and all(has)) else None
    if risk_tier is None:
        risk_tier = RiskTier.ID if lab_arr is not None else RiskTier.FAR
    if risk_tier == RiskTier.ID and lab_arr is None:
        if not rows:
            lab_arr = np.zeros(0, dtype=np.int64)
        else:
            raise FormatError(f"{path}: ID rows need labels")
    if risk_tier != RiskTier.ID:
        lab_arr = None
    _validate_labels(lab_arr, hierarchy)
    if normalized:
        vectors = _renormalize(vectors)
    return EmbeddingSet(vectors, lab_arr, risk_tier, normalized, name=Path(path).stem)
