import pytest
import numpy as np
from numpy.testing import assert_allclose

from pulmcal._lax_wendroff import richtmyer_step as pure_step

fast = pytest.importorskip("pulmcal._lax_wendroff_fast")


@pytest.fixture
def data():
    x = np.linspace(0.0, 1.0, 17)
    A = np.pi * (1.0 + 0.05 * np.sin(2 * np.pi * x))
    Q = 20.0 + 5.0 * np.cos(2 * np.pi * x)
    return A, Q


def test_extension(data):
    A, Q = data
    args = (1e-4, 1.0 / 16, 3e4, 7 / 6, 2 * np.pi * 0.03 * 7 / 1.03)

    # numpy version
    expected = pure_step(A, Q, *args)

    # extension version
    result = fast.richtmyer_step(np.ascontiguousarray(A), np.ascontiguousarray(Q), *args)

    for got, want in zip(result, expected):
        assert_allclose(got, want, rtol=1e-13, atol=1e-12)


def test_end_nodes_untouched(data):
    A, Q = data
    A_new, Q_new, A_half, Q_half = fast.richtmyer_step(A, Q, 1e-4, 1.0 / 16, 3e4, 1.0, 0.0)
    assert (A_new[0], A_new[-1], Q_new[0], Q_new[-1]) == (A[0], A[-1], Q[0], Q[-1])
    assert A_half.shape == Q_half.shape == (len(A) - 1,)


def test_uniform_state_is_steady():
    A = np.full(9, 2.0)
    Q = np.zeros(9)
    for step in (pure_step, fast.richtmyer_step):
        A_new, Q_new, _, _ = step(A, Q, 1e-3, 0.1, 5e4, 1.2, 1.0)
        assert_allclose(A_new, A, rtol=1e-15)
        assert_allclose(Q_new, Q, atol=1e-15)
