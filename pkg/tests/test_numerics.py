import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment as scipy_lsa

from icebeem.errors import DegenerateColumnError, NotPositiveDefiniteError
from icebeem.numerics import (
    cca,
    cholesky,
    gaussian_sample,
    linear_sum_assignment,
    make_rng,
    numerical_rank,
    pearson_abs_corr,
)
from oracles import brute_force_assignment


def test_make_rng_reproducible_and_streams_differ():
    a = make_rng(5).standard_normal(4)
    b = make_rng(5).standard_normal(4)
    c = make_rng(5, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_numerical_rank():
    rng = make_rng(0)
    A = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 6))
    assert numerical_rank(A) == 3
    assert numerical_rank(np.zeros((3, 3))) == 0


def test_cholesky_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))
    S = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = cholesky(S)
    assert np.allclose(L @ L.T, S)


def test_gaussian_sample_moments():
    S = np.array([[2.0, 0.6], [0.6, 1.0]])
    Z = gaussian_sample(np.array([1.0, -1.0]), cholesky(S), 200_000, make_rng(1))
    assert np.allclose(Z.mean(axis=0), [1.0, -1.0], atol=0.02)
    assert np.allclose(np.cov(Z, rowvar=False), S, atol=0.03)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_assignment_matches_brute_force(n):
    rng = make_rng(7, n)
    for _ in range(40):
        C = rng.standard_normal((n, n))
        best, _ = brute_force_assignment(C)
        res = linear_sum_assignment(C)
        assert sorted(res.permutation.tolist()) == list(range(n))
        assert res.total == pytest.approx(best, abs=1e-12)


def test_assignment_maximize_and_scipy_agree():
    rng = make_rng(3)
    for n in (7, 10, 25):
        C = rng.random((n, n))
        rows, cols = scipy_lsa(C, maximize=True)
        ours = linear_sum_assignment(C, maximize=True)
        assert ours.total == pytest.approx(C[rows, cols].sum(), abs=1e-10)


def test_assignment_ties_pick_lowest_index_permutation():
    C = np.ones((4, 4))
    assert linear_sum_assignment(C).permutation.tolist() == [0, 1, 2, 3]
    C = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    _, winners = brute_force_assignment(C)
    assert tuple(linear_sum_assignment(C).permutation) == min(winners)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10**6))
def test_assignment_integer_costs_property(n, seed):
    C = make_rng(seed).integers(0, 4, (n, n)).astype(float)
    best, winners = brute_force_assignment(C)
    res = linear_sum_assignment(C)
    assert res.total == best
    assert tuple(res.permutation) == min(winners)


def test_assignment_rejects_rectangular():
    with pytest.raises(ValueError):
        linear_sum_assignment(np.zeros((2, 3)))


def test_pearson_abs_corr_and_degenerate_column():
    rng = make_rng(2)
    X = rng.standard_normal((500, 3))
    C = pearson_abs_corr(X, -2 * X + 1)
    assert np.allclose(np.diag(C), 1.0)
    Xc = X.copy()
    Xc[:, 1] = 3.0
    with pytest.raises(DegenerateColumnError):
        pearson_abs_corr(Xc, X)


def test_cca_recovers_shared_signal():
    rng = make_rng(4)
    S = rng.standard_normal((5000, 2))
    X = np.hstack([S, rng.standard_normal((5000, 1))]) @ rng.standard_normal((3, 3))
    Y = np.hstack([S @ rng.standard_normal((2, 2)), rng.standard_normal((5000, 2))])
    res = cca(X, Y)
    assert res.corrs[0] == pytest.approx(1.0, abs=1e-6)
    assert res.corrs[1] == pytest.approx(1.0, abs=1e-6)
    assert res.corrs[2] < 0.1
    U = (X - X.mean(0)) @ res.proj_x
    assert np.allclose(np.cov(U, rowvar=False, ddof=1), np.eye(3), atol=1e-6)


def test_cca_needs_enough_rows():
    with pytest.raises(ValueError):
        cca(np.ones((4, 2)), np.ones((4, 2)))
