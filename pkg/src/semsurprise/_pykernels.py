"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Both modules expose the same three functions with the same contracts; the
numeric results agree to rounding error, not bit for bit.
"""

import numpy as np


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def sinkhorn_log(sim, epsilon, max_iters, tol):
    """Log-domain Sinkhorn between uniform marginals; returns (B*plan, iterations)."""
    B, K = sim.shape
    M = sim / epsilon
    f = np.zeros(B)
    g = np.zeros(K)
    log_a = -np.log(B)
    log_b = -np.log(K)
    target = B / K
    it = 0
    while it < max_iters:
        it += 1
        g = log_b - _lse(M + f[:, None], axis=0)
        f = log_a - _lse(M + g[None, :], axis=1)
        colsum = np.exp(M + f[:, None] + g[None, :]).sum(axis=0) * B
        if np.max(np.abs(colsum - target)) < tol:
            break
    return np.exp(M + f[:, None] + g[None, :] + np.log(B)), it


def _pair_dist(A, B):
    return np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1))


def group_distance_sums(X, groups, G, chunk=256):
    """G x G matrix of summed Euclidean distances; diagonal holds i<j pairs once."""
    N = X.shape[0]
    sums = np.zeros((G, G))
    for start in range(0, N, chunk):
        stop = min(start + chunk, N)
        d = _pair_dist(X[start:stop], X)
        # keep only j > i
        cols = np.arange(N)[None, :]
        rows = np.arange(start, stop)[:, None]
        d = np.where(cols > rows, d, 0.0)
        # d_rows aggregated by group of j, then by group of i
        by_col = np.zeros((stop - start, G))
        np.add.at(by_col.T, groups, d.T)
        np.add.at(sums, groups[start:stop], by_col)
    diag = np.diag(sums).copy()
    sums = sums + sums.T
    np.fill_diagonal(sums, diag)
    return sums


def nearest_two(Q, R, rep_class):
    """Per query: nearest distance, nearest distance outside the winner's class, winner index."""
    dist = _pair_dist(Q, R)
    idx = np.argmin(dist, axis=1)
    d1 = dist[np.arange(len(Q)), idx]
    other = rep_class[None, :] != rep_class[idx][:, None]
    d2 = np.where(other, dist, np.inf).min(axis=1) if R.shape[0] else np.full(len(Q), np.inf)
    return d1, d2, idx.astype(np.int64)
