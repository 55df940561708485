import json

import numpy as np
import pytest

from icebeem.idevel import (
    LogRegModel,
    MccReport,
    consistency_matrix,
    logreg_accuracy,
    logreg_fit,
    mcc_strong,
    mcc_weak,
    offdiag_mean,
)
from icebeem.numerics import make_rng


def _perm_scale(Z, seed):
    rng = make_rng(seed)
    d = Z.shape[1]
    D = rng.uniform(0.5, 2.0, d) * rng.choice([-1.0, 1.0], d)
    return Z[:, rng.permutation(d)] * D + rng.standard_normal(d)


def test_strong_identity_and_invariance():
    Z = make_rng(0).standard_normal((2000, 5))
    assert mcc_strong(Z, Z).mcc == 1.0
    assert mcc_strong(Z, _perm_scale(Z, 1)).mcc == pytest.approx(1.0, abs=1e-10)


def test_strong_null_level():
    rng = make_rng(2)
    assert mcc_strong(rng.standard_normal((10_000, 5)), rng.standard_normal((10_000, 5))).mcc < 0.08


def test_strong_symmetry_and_permutation_consistency():
    rng = make_rng(3)
    A = rng.standard_normal((500, 4))
    B = A @ rng.standard_normal((4, 4)) + 0.5 * rng.standard_normal((500, 4))
    ab, ba = mcc_strong(A, B), mcc_strong(B, A)
    assert ab.mcc == pytest.approx(ba.mcc, abs=1e-12)
    assert np.array_equal(np.argsort(ab.permutation.permutation), ba.permutation.permutation)
    B2 = _perm_scale(B, 4)
    assert mcc_strong(A, B2).mcc == pytest.approx(ab.mcc, abs=1e-12)


def test_weak_examples():
    rng = make_rng(5)
    A = rng.standard_normal((10_000, 5)) ** 3
    B = A @ rng.standard_normal((5, 5)) + rng.standard_normal(5)
    weak = mcc_weak(A, B)
    assert weak.mcc >= 0.99
    assert mcc_strong(A, B).mcc < 0.99
    assert mcc_weak(A, A).mcc == pytest.approx(1.0, abs=1e-6)
    assert mcc_weak(rng.standard_normal((10_000, 5)), rng.standard_normal((10_000, 5))).mcc < 0.1


def test_weak_not_materially_below_strong():
    rng = make_rng(6)
    for s in range(5):
        A = rng.standard_normal((10_000, 4))
        B = np.tanh(A + 0.3 * s) + 0.2 * rng.standard_normal((10_000, 4))
        assert mcc_weak(A, B).mcc >= mcc_strong(A, B).mcc - 0.02


def test_weak_is_deterministic_in_seed():
    rng = make_rng(7)
    A, B = rng.standard_normal((400, 3)), rng.standard_normal((400, 3))
    assert mcc_weak(A, B, seed=3).mcc == mcc_weak(A, B, seed=3).mcc


def test_mcc_shape_errors():
    with pytest.raises(ValueError):
        mcc_strong(np.ones((5, 2)), np.ones((5, 3)))
    with pytest.raises(ValueError):
        mcc_weak(np.ones((5, 2)), np.ones((6, 2)))


def test_report_round_trip():
    rep = mcc_strong(*make_rng(8).standard_normal((2, 100, 3)))
    back = MccReport.from_dict(json.loads(rep.to_json()))
    assert back.mcc == rep.mcc
    assert np.array_equal(back.permutation.permutation, rep.permutation.permutation)
    assert np.array_equal(back.per_component_corrs, rep.per_component_corrs)


def test_consistency_matrix_examples():
    Z = make_rng(9).standard_normal((1000, 3))
    assert np.array_equal(consistency_matrix([Z, Z, Z]), np.ones((3, 3)))
    M = consistency_matrix([Z, _perm_scale(Z, 1), _perm_scale(Z, 2)])
    assert np.allclose(M, 1.0, atol=1e-10)
    R = consistency_matrix([make_rng(s).standard_normal((5000, 3)) for s in range(4)], "weak")
    assert np.allclose(R, R.T) and np.all(np.diag(R) == 1.0)
    assert offdiag_mean(R) < 0.1
    with pytest.raises(ValueError):
        consistency_matrix([Z])
    with pytest.raises(ValueError):
        consistency_matrix([Z, Z[:, :2]])


def test_logreg_separable_and_chance():
    x = np.concatenate([np.linspace(-2, -0.5, 50), np.linspace(0.5, 2, 50)])[:, None]
    y = (x[:, 0] > 0).astype(int)
    assert logreg_accuracy(logreg_fit(x, y), x, y) == 1.0
    rng = make_rng(10)
    F = rng.standard_normal((6000, 3))
    lab = rng.integers(0, 3, 6000)
    model = logreg_fit(F[:3000], lab[:3000])
    assert abs(logreg_accuracy(model, F[3000:], lab[3000:]) - 1 / 3) < 0.05
    assert logreg_accuracy(model, F[:3000], lab[:3000]) >= 1 / 3 - 0.02


def test_logreg_duplicate_columns_and_determinism():
    rng = make_rng(11)
    F = rng.standard_normal((400, 2))
    lab = (F[:, 0] + 0.5 * rng.standard_normal(400) > 0).astype(int) + (F[:, 1] > 1)
    a = logreg_fit(F, lab)
    b = logreg_fit(np.hstack([F, F[:, :1]]), lab)
    assert np.array_equal(a.predict(F), b.predict(np.hstack([F, F[:, :1]])))
    assert np.array_equal(a.weights, logreg_fit(F, lab).weights)


def test_logreg_errors_and_constant_model():
    with pytest.raises(ValueError):
        logreg_fit(np.ones((5, 2)), np.zeros(5))
    const = LogRegModel(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([4, 7]), np.zeros(1), np.ones(1))
    assert logreg_accuracy(const, np.ones((10, 1)), np.full(10, 4)) == 1.0


def test_random_weights_chance_accuracy():
    rng = make_rng(12)
    model = LogRegModel(rng.standard_normal((2, 4)), np.array([0, 1]), np.zeros(3), np.ones(3))
    labels = np.repeat([0, 1], 5000)
    assert abs(logreg_accuracy(model, rng.standard_normal((10_000, 3)), labels) - 0.5) < 0.02
