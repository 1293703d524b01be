"""Manifold-shaping objective and its exact gradients.

Three terms:

* mixture-posterior NLL of each embedding under the class-conditional
  prototype mixtures (gradient w.r.t. embeddings, prototypes and weights
  held fixed);
* InfoNCE among prototypes, positives = other prototypes of the same
  subclass, denominator = every prototype except the anchor;
* hierarchical contrast, positives = prototypes of sibling subclasses,
  negatives = prototypes of other superclasses.

:func:`total_loss` routes the two prototype-level gradients back into the
batch embeddings through the EMA step that produces the next bank:
``p' = normalize(alpha * p + (1 - alpha) * sum_i w_ik z_i)`` with ``p``
and ``w`` held constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prototypes import DEGENERATE_NORM, ema_targets


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    tau_p: float = 0.2
    tau_h: float = 0.2
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if min(self.tau, self.tau_p, self.tau_h) <= 0:
            raise ValueError("temperatures must be positive")
        if min(self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    mle: float
    inter_proto: float
    hierarchy: float
    total: float
    grad_embeddings: np.ndarray


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _logsumexp(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all -inf rows give -inf
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.log(weights)


def loss_mle(z, labels, prototypes, weights, tau: float):
    """Mixture-posterior NLL.

    z: B x D embeddings, labels: B subclass ids, prototypes: C x K x D,
    weights: B x C x K mixture weights. Returns (value, dL/dz).
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    P = np.asarray(prototypes, dtype=np.float64)
    B = z.shape[0]
    C, K, D = P.shape
    logits = np.einsum("bd,ckd->bck", z, P) / tau + _log_weights(weights)
    flat = logits.reshape(B, C * K)
    lse_all = _logsumexp(flat)
    own = logits[np.arange(B), labels]
    lse_own = _logsumexp(own)
    with np.errstate(invalid="ignore"):
        per_sample = lse_all - lse_own
    bad = ~np.isfinite(per_sample)
    if bad.any():
        raise NonFiniteLossError(f"non-finite mixture NLL at sample {int(np.flatnonzero(bad)[0])}",
                                 int(np.flatnonzero(bad)[0]))
    value = float(per_sample.mean())
    soft_all = np.exp(flat - lse_all[:, None]).reshape(B, C, K)
    soft_own = np.exp(own - lse_own[:, None])
    coef = soft_all
    coef[np.arange(B), labels] -= soft_own
    grad = np.einsum("bck,ckd->bd", coef, P) / (tau * B)
    return value, grad


def loss_inter_proto(prototypes, tau_p: float):
    """Prototype InfoNCE. Returns (value, dL/dprototypes)."""
    P = np.asarray(prototypes, dtype=np.float64)
    C, K, D = P.shape
    if K < 2:
        raise ValueError("no positives; term disabled (K=1)")
    F = P.reshape(C * K, D)
    n = C * K
    S = F @ F.T / tau_p
    eye = np.eye(n, dtype=bool)
    cls = np.repeat(np.arange(C), K)
    pos = (cls[:, None] == cls[None, :]) & ~eye
    masked = np.where(eye, -np.inf, S)
    lse = _logsumexp(masked)
    pos_mean = np.where(pos, S, 0.0).sum(axis=1) / (K - 1)
    value = float(np.mean(lse - pos_mean))
    soft = np.exp(masked - lse[:, None])
    G = (soft - pos / (K - 1)) / n
    grad = (G + G.T) @ F / tau_p
    return value, grad.reshape(C, K, D)


def hierarchy_masks(superclass_of, K: int):
    sup = np.repeat(np.asarray(superclass_of), K)
    cls = np.repeat(np.arange(len(superclass_of)), K)
    pos = (sup[:, None] == sup[None, :]) & (cls[:, None] != cls[None, :])
    neg = sup[:, None] != sup[None, :]
    return pos, neg


def loss_hierarchy(prototypes, superclass_of, tau_h: float):
    """Sibling-attracting, cross-superclass-repelling contrast.

    Returns (value, dL/dprototypes). Raises if any anchor has no siblings.
    """
    P = np.asarray(prototypes, dtype=np.float64)
    C, K, D = P.shape
    F = P.reshape(C * K, D)
    n = C * K
    pos, neg = hierarchy_masks(superclass_of, K)
    npos = pos.sum(axis=1)
    if (npos == 0).any():
        anchors = np.flatnonzero(npos == 0)
        raise ValueError(f"no siblings for anchor prototype(s) {anchors.tolist()}")
    S = F @ F.T / tau_h
    neg_lse = _logsumexp(np.where(neg, S, -np.inf))  # -inf when no negatives
    denom = np.logaddexp(S, neg_lse[:, None])
    term = np.where(pos, denom - S, 0.0)
    scale = 1.0 / (n * npos)
    value = float(np.sum(term.sum(axis=1) * scale))
    G = np.where(pos, np.exp(S - denom) - 1.0, 0.0) * scale[:, None]
    if neg.any():
        inv_share = np.where(pos, np.exp(neg_lse[:, None] - denom), 0.0).sum(axis=1)
        safe_lse = np.where(np.isfinite(neg_lse), neg_lse, 0.0)
        G += np.where(neg, np.exp(S - safe_lse[:, None]), 0.0) * (inv_share * scale)[:, None]
    grad = (G + G.T) @ F / tau_h
    return value, grad.reshape(C, K, D)


def coupled_prototypes(prototypes, alpha, z, labels, own_weights):
    """Next-bank prototypes as a function of the batch, plus what backprop needs."""
    P = np.asarray(prototypes, dtype=np.float64)
    C = P.shape[0]
    T = ema_targets(z, labels, own_weights, C)
    V = alpha * P + (1.0 - alpha) * T
    norms = np.linalg.norm(V, axis=-1, keepdims=True)
    live = norms > DEGENERATE_NORM
    # absent classes: V = alpha * P, which normalizes back to P
    Pn = np.where(live, V / np.where(live, norms, 1.0), P)
    return Pn, norms, live


def coupled_embedding_grad(grad_protos, Pn, norms, live, alpha, labels, own_weights):
    """Pull dL/dp' back to the batch embeddings through normalize(alpha p + (1-alpha) sum w z)."""
    radial = np.sum(grad_protos * Pn, axis=-1, keepdims=True)
    H = np.where(live, (grad_protos - radial * Pn) / np.where(live, norms, 1.0), 0.0)
    return (1.0 - alpha) * np.einsum("bk,bkd->bd", own_weights, H[labels])


def total_loss(z, labels, prototypes, weights, cfg: LossConfig, alpha: float, superclass_of,
               hierarchy_enabled: bool = True) -> LossReport:
    """Weighted sum of the three terms with the gradient w.r.t. the batch embeddings.

    ``prototypes`` is the bank before this batch's EMA step; the mixture NLL is
    evaluated against it, the prototype terms against the post-step bank.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    K = np.asarray(prototypes).shape[1]
    mle, grad = loss_mle(z, labels, prototypes, weights, cfg.tau)
    own = weights[np.arange(len(labels)), labels]
    Pn, norms, live = coupled_prototypes(prototypes, alpha, z, labels, own)
    gP = np.zeros_like(Pn)
    inter = 0.0
    if K >= 2:
        inter, g = loss_inter_proto(Pn, cfg.tau_p)
        gP += cfg.lambda1 * g
    hier = 0.0
    if hierarchy_enabled and cfg.lambda2 > 0:
        hier, g = loss_hierarchy(Pn, superclass_of, cfg.tau_h)
        gP += cfg.lambda2 * g
    grad = grad + coupled_embedding_grad(gP, Pn, norms, live, alpha, labels, own)
    lam2 = cfg.lambda2 if hierarchy_enabled else 0.0
    total = mle + cfg.lambda1 * inter + lam2 * hier
    if not np.isfinite(total):
        raise NonFiniteLossError("non-finite total loss")
    return LossReport(mle, inter, hier, total, grad)
