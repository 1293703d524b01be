"""Projection-head training on fixed input features.

Per batch: forward through the head, Sinkhorn-assign each class's members to
its prototypes, evaluate the coupled objective, take a plain SGD step on the
head, then apply the EMA step to the bank.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import sinkhorn
from .data import EmbeddingSet, FormatError, LabelHierarchy
from .diagnostics import cohesion, compactness, separation
from .losses import LossConfig, NonFiniteLossError, total_loss
from .prototypes import PrototypeBank, ema_update, init_prototypes

log = logging.getLogger(__name__)

_HEAD_MAGIC = b"HEAD"
_HEAD_HEADER = struct.Struct("<4sHIII")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, message="non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True, eq=False)
class ProjectionHead:
    """Two-layer tanh MLP followed by L2 normalization."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, in_dim, hidden_dim, out_dim, rng) -> "ProjectionHead":
        W1 = rng.standard_normal((hidden_dim, in_dim)) / np.sqrt(in_dim)
        W2 = rng.standard_normal((out_dim, hidden_dim)) / np.sqrt(hidden_dim)
        return cls(W1, np.zeros(hidden_dim), W2, np.zeros(out_dim))

    @property
    def in_dim(self):
        return self.W1.shape[1]

    @property
    def out_dim(self):
        return self.W2.shape[0]

    def params(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.in_dim:
            raise ValueError(f"dimension mismatch: head expects {self.in_dim}, got {X.shape[1]}")
        a = X @ self.W1.T + self.b1
        h = np.tanh(a)
        u = h @ self.W2.T + self.b2
        n = np.linalg.norm(u, axis=1, keepdims=True)
        z = u / n
        return z, (X, h, z, n)

    def backward(self, cache, dz):
        X, h, z, n = cache
        du = (dz - z * np.sum(dz * z, axis=1, keepdims=True)) / n
        gW2 = du.T @ h
        gb2 = du.sum(axis=0)
        da = (du @ self.W2) * (1.0 - h * h)
        gW1 = da.T @ X
        gb1 = da.sum(axis=0)
        return (gW1, gb1, gW2, gb2)

    def step(self, grads, lr) -> "ProjectionHead":
        return ProjectionHead(*(p - lr * g for p, g in zip(self.params(), grads)))

    def __eq__(self, other):
        if not isinstance(other, ProjectionHead):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = sinkhorn.DEFAULT_EPSILON
    max_iters: int = sinkhorn.DEFAULT_MAX_ITERS
    tol: float = sinkhorn.DEFAULT_TOL


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    loss: LossConfig = field(default_factory=LossConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    # the bank's standalone default (0.999) leaves prototypes near their random
    # init over a few hundred steps; training uses a faster decay
    ema_alpha: float = 0.99
    seed: int = 0
    hierarchy_loss_enabled: bool = True
    num_prototypes: int = 3
    hidden_dim: int = 64
    embed_dim: int = 16

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def flat_items(self):
        """(dotted key, value) pairs, the shape used by the config file."""
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("loss", "sinkhorn"):
                for g in fields(v):
                    yield f"{f.name}.{g.name}", getattr(v, g.name)
            else:
                yield f.name, v

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        top, loss, sk = {}, {}, {}
        known = dict(self.flat_items())
        for key, raw in overrides.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            value = _coerce(raw, type(known[key]))
            if key.startswith("loss."):
                loss[key[5:]] = value
            elif key.startswith("sinkhorn."):
                sk[key[9:]] = value
            else:
                top[key] = value
        return replace(
            self,
            loss=replace(self.loss, **loss),
            sinkhorn=replace(self.sinkhorn, **sk),
            **top,
        )


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw.strip())


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return (base or TrainConfig()).with_overrides(parse_config_text(Path(path).read_text()))


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.flat_items())


@dataclass
class EpochRecord:
    epoch: int
    mle: float
    inter_proto: float
    hierarchy: float
    total: float
    compactness: float
    cohesion: float
    separation: float
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)

    LOSS_COLUMNS = ("epoch", "mle", "inter_proto", "hierarchy", "total", "compactness", "cohesion", "separation")

    def to_csv(self) -> str:
        rows = [",".join(self.LOSS_COLUMNS)]
        for r in self.epochs:
            rows.append(",".join([str(r.epoch)] + [repr(float(getattr(r, c))) for c in self.LOSS_COLUMNS[1:]]))
        return "\n".join(rows) + "\n"

    @property
    def wall_clock(self) -> float:
        return sum(r.wall_clock for r in self.epochs)


def embed(head: ProjectionHead, emb: EmbeddingSet) -> EmbeddingSet:
    z, _ = head.forward(emb.as_float64())
    return EmbeddingSet(z, emb.labels, emb.risk_tier, True, name=emb.name)


def _snapshot(z, labels, hierarchy):
    try:
        return compactness(z, labels), cohesion(z, labels, hierarchy), separation(z, labels, hierarchy)
    except ValueError:
        return float("nan"), float("nan"), float("nan")


def initial_state(data: EmbeddingSet, hierarchy: LabelHierarchy, cfg: TrainConfig):
    ss = np.random.SeedSequence(cfg.seed)
    head_seed, bank_seed, shuffle_seed = ss.spawn(3)
    head = ProjectionHead.init(data.dim, cfg.hidden_dim, cfg.embed_dim, np.random.Generator(np.random.PCG64(head_seed)))
    bank_int = int(bank_seed.generate_state(1)[0])
    bank = init_prototypes(hierarchy, cfg.num_prototypes, cfg.embed_dim, bank_int, cfg.ema_alpha)
    return head, bank, np.random.Generator(np.random.PCG64(shuffle_seed))


def train_step(head, bank, X, y, cfg: TrainConfig):
    """One SGD + EMA step; returns (head, bank, LossReport)."""
    z, cache = head.forward(X)
    sk = cfg.sinkhorn
    assignments = sinkhorn.assign_per_class(z, y, bank.prototypes, sk.epsilon, sk.max_iters, sk.tol)
    W = sinkhorn.full_weights(y, assignments, bank.num_classes, bank.K)
    report = total_loss(
        z, y, bank.prototypes, W, cfg.loss, bank.alpha, bank.hierarchy.superclass_of,
        hierarchy_enabled=cfg.hierarchy_loss_enabled,
    )
    grads = head.backward(cache, report.grad_embeddings)
    new_head = head.step(grads, cfg.learning_rate)
    own = W[np.arange(len(y)), y]
    new_bank = ema_update(bank, z, y, own)
    return new_head, new_bank, report


def train(data: EmbeddingSet, hierarchy: LabelHierarchy, cfg: TrainConfig | None = None):
    """Train a projection head and prototype bank. Returns (head, bank, TrainLog)."""
    cfg = cfg or TrainConfig()
    if data.labels is None:
        raise ValueError("training data must be labelled")
    if len(data) and data.labels.max() >= hierarchy.num_subclasses:
        raise ValueError("labels inconsistent with hierarchy")
    if cfg.hierarchy_loss_enabled:
        hierarchy.check_hierarchy_loss()
    X = data.as_float64()
    y = data.labels
    head, bank, rng = initial_state(data, hierarchy, cfg)
    tlog = TrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(X))
        sums = np.zeros(4)
        nb = 0
        for b, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            try:
                head, bank, rep = train_step(head, bank, X[idx], y[idx], cfg)
            except NonFiniteLossError as exc:
                raise TrainingDiverged(epoch, b, str(exc)) from exc
            vals = np.array([rep.mle, rep.inter_proto, rep.hierarchy, rep.total])
            if not np.all(np.isfinite(vals)) or not all(np.all(np.isfinite(p)) for p in head.params()):
                raise TrainingDiverged(epoch, b)
            sums += vals
            nb += 1
        mean = sums / max(nb, 1)
        z, _ = head.forward(X)
        snap = _snapshot(z, y, hierarchy)
        rec = EpochRecord(epoch, *map(float, mean), *snap, wall_clock=time.perf_counter() - t0)
        tlog.epochs.append(rec)
        log.debug("epoch %d total=%.5f mle=%.5f", epoch, rec.total, rec.mle)
    return head, bank, tlog


def save_head(head: ProjectionHead, path) -> None:
    hidden, in_dim = head.W1.shape
    out_dim = head.W2.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEAD_HEADER.pack(_HEAD_MAGIC, 1, in_dim, hidden, out_dim))
        for p in head.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_head(path) -> ProjectionHead:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD_HEADER.size:
        raise FormatError(f"{path}: malformed header")
    magic, version, in_dim, hidden, out_dim = _HEAD_HEADER.unpack_from(raw)
    if magic != _HEAD_MAGIC or version != 1:
        raise FormatError(f"{path}: malformed header")
    shapes = [(hidden, in_dim), (hidden,), (out_dim, hidden), (out_dim,)]
    sizes = [int(np.prod(s)) for s in shapes]
    if len(raw) != _HEAD_HEADER.size + 8 * sum(sizes):
        raise FormatError(f"{path}: dimension mismatch")
    off = _HEAD_HEADER.size
    arrays = []
    for shape, size in zip(shapes, sizes):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy())
        off += 8 * size
    return ProjectionHead(*arrays)
