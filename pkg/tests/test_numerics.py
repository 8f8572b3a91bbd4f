import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from vbakf.errors import DomainError, NotPositiveDefinite
from vbakf.numerics import as_matrix, as_vector, cholesky, digamma, is_spd, logdet_spd, spd_inverse, symmetrize

from conftest import random_spd

EULER = 0.5772156649015329


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_known_factor():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    low = cholesky(a)
    np.testing.assert_allclose(low, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], rtol=1e-14)
    np.testing.assert_allclose(low @ low.T, a, rtol=1e-14)


@pytest.mark.parametrize("a", [[[1.0, 2.0], [2.0, 1.0]], [[0.0]], [[-1.0]], [[1.0, 0.0], [0.0, -1e-3]]])
def test_cholesky_rejects_indefinite(a):
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array(a))


def test_cholesky_rejects_asymmetric_and_nonfinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_jitter_rescues_roundoff_only():
    # rank-one plus an eigenvalue at -1e-17 relative: round-off territory
    v = np.array([1.0, 1.0])
    a = np.outer(v, v) + 1e-17 * np.eye(2)
    a[1, 1] -= 2e-17
    assert is_spd(a)
    assert not is_spd(np.outer(v, v) - 1e-6 * np.eye(2))


def test_spd_inverse_examples():
    np.testing.assert_array_equal(spd_inverse(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(spd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), rtol=1e-15)


def test_logdet_examples():
    assert logdet_spd(np.eye(5)) == 0.0
    assert logdet_spd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0), abs=1e-15)


def test_symmetrize_examples():
    np.testing.assert_array_equal(symmetrize(np.array([[1.0, 2.0], [0.0, 1.0]])), [[1.0, 1.0], [1.0, 1.0]])
    a = np.array([[1.0, 3.0], [3.0, 5.0]])
    np.testing.assert_array_equal(symmetrize(a), a)


def test_coercion_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.inf]])
    with pytest.raises(ValueError):
        as_vector([np.nan])
    assert as_matrix(2.0).shape == (1, 1)
    assert as_vector(2.0).shape == (1,)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), log_cond=st.floats(0.0, 8.0))
def test_spd_properties(seed, d, log_cond):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, d, cond=math.exp(log_cond))
    low = cholesky(a)
    assert np.linalg.norm(low @ low.T - a) / np.linalg.norm(a) < 1e-10
    inv = spd_inverse(a)
    np.testing.assert_allclose(a @ inv, np.eye(d), atol=1e-8 * np.linalg.cond(a))
    np.testing.assert_allclose(spd_inverse(inv), a, rtol=1e-6, atol=1e-6 * np.abs(a).max())
    assert np.max(np.abs(inv - inv.T)) == 0.0
    assert abs(logdet_spd(a) + logdet_spd(inv)) < 1e-8 * d
    # independent eigenvalue oracle
    assert logdet_spd(a) == pytest.approx(float(np.sum(np.log(np.linalg.eigvalsh(a)))), abs=1e-9 * d)


def test_digamma_identities():
    assert digamma(1.0) == pytest.approx(-EULER, abs=1e-10)
    assert digamma(2.0) == pytest.approx(1.0 - EULER, abs=1e-10)
    assert digamma(0.5) == pytest.approx(-EULER - 2.0 * math.log(2.0), abs=1e-10)


def test_digamma_matches_reference_over_range():
    xs = np.geomspace(1e-3, 1e6, 400)
    err = max(abs(digamma(x) - special.digamma(x)) for x in xs)
    assert err < 1e-10


def test_digamma_recurrence():
    for x in np.geomspace(0.01, 1000.0, 200):
        assert abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-10


@pytest.mark.parametrize("x", [0.0, -1.0, float("nan"), float("inf")])
def test_digamma_domain(x):
    with pytest.raises(DomainError):
        digamma(x)
