import os
import subprocess
import sys

import numpy as np
import pytest

from semsurprise import _backend, _pykernels


def test_backend_name():
    assert _backend.BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(5))
def test_nearest_two_parity(seed):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((50, 6))
    R = r.standard_normal((20, 6))
    cls = r.integers(0, 4, 20)
    got = _backend.nearest_two(Q, R, cls)
    want = _pykernels.nearest_two(Q, R, cls)
    np.testing.assert_allclose(got[0], want[0], rtol=1e-12)
    np.testing.assert_allclose(got[1], want[1], rtol=1e-12)
    np.testing.assert_array_equal(got[2], want[2])


def test_nearest_ties_take_lowest_index():
    R = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    for impl in (_backend, _pykernels):
        d1, d2, idx = impl.nearest_two(np.zeros((1, 2)), R, np.array([0, 1, 2]))
        assert idx[0] == 0 and d1[0] == 1.0 and d2[0] == 1.0


def test_group_sums_parity_uneven_groups():
    r = np.random.default_rng(1)
    X = r.standard_normal((700, 3))  # spans several chunks in the numpy path
    g = r.integers(0, 6, 700)
    np.testing.assert_allclose(_backend.group_distance_sums(X, g, 6), _pykernels.group_distance_sums(X, g, 6),
                               rtol=1e-11)


def test_pure_python_switch():
    env = dict(os.environ, SEMSURPRISE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import semsurprise; print(semsurprise.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
