"""Kernel backend selection.

The compiled extension is preferred; setting ``SEMSURPRISE_PURE_PYTHON=1``
or a missing build falls back to the numpy implementation.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("SEMSURPRISE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def sinkhorn_log(sim, epsilon, max_iters, tol):
    return _impl.sinkhorn_log(_f64(sim), float(epsilon), int(max_iters), float(tol))


def group_distance_sums(X, groups, G):
    return _impl.group_distance_sums(_f64(X), _i64(groups), int(G))


def nearest_two(Q, R, rep_class):
    return _impl.nearest_two(_f64(Q), _f64(R), _i64(rep_class))
