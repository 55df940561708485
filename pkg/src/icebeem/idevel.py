"""Identifiability scores and the logistic-regression probe.

Strong MCC matches components one-to-one by absolute Pearson correlation.
Weak MCC first grants credit for an arbitrary linear map by projecting both
blocks onto canonical variates fitted on half of the rows, then scores the
other half.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import Assignment, as_matrix, cca, linear_sum_assignment, make_rng, pearson_abs_corr


@dataclass
class MccReport:
    mcc: float
    permutation: Assignment
    per_component_corrs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mcc": float(self.mcc),
            "permutation": [int(i) for i in self.permutation.permutation],
            "per_component_corrs": [float(c) for c in self.per_component_corrs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MccReport":
        corrs = np.asarray(d["per_component_corrs"], dtype=np.float64)
        perm = np.asarray(d["permutation"], dtype=np.int64)
        return cls(float(d["mcc"]), Assignment(perm, float(corrs.sum())), corrs)


def mcc_strong(A, B) -> MccReport:
    """Mean absolute correlation under the best one-to-one column matching."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    C = pearson_abs_corr(A, B)
    assign = linear_sum_assignment(C, maximize=True)
    corrs = C[np.arange(C.shape[0]), assign.permutation]
    return MccReport(float(corrs.mean()), assign, corrs)


def mcc_weak(A, B, k: int | None = None, seed: int = 0) -> MccReport:
    """MCC after a CCA alignment fitted on one half of the rows and scored on the other.

    Rows are shuffled with ``seed`` before splitting, so the result is a pure
    function of the inputs and the seed.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise ValueError("A and B need the same number of rows")
    n = A.shape[0]
    order = make_rng(seed).permutation(n)
    fit, test = order[: n // 2], order[n // 2:]
    res = cca(A[fit], B[fit], k)
    mu_a = A[fit].mean(axis=0)
    mu_b = B[fit].mean(axis=0)
    U = (A[test] - mu_a) @ res.proj_x
    V = (B[test] - mu_b) @ res.proj_y
    return mcc_strong(U, V)


def consistency_matrix(feature_dumps, mode: str = "strong", seed: int = 0) -> np.ndarray:
    """Symmetric matrix of pairwise MCCs between representations of the same rows."""
    dumps = [as_matrix(F, "features") for F in feature_dumps]
    if len(dumps) < 2:
        raise ValueError("need at least two feature dumps")
    if any(F.shape != dumps[0].shape for F in dumps):
        raise ValueError("all feature dumps must have the same shape")
    if mode not in ("strong", "weak"):
        raise ValueError(f"unknown mode {mode!r}")
    k = len(dumps)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            if mode == "strong":
                r = mcc_strong(dumps[i], dumps[j])
            else:
                r = mcc_weak(dumps[i], dumps[j], seed=seed)
            out[i, j] = out[j, i] = r.mcc
    return out


def offdiag_mean(M: np.ndarray) -> float:
    k = M.shape[0]
    return float((M.sum() - np.trace(M)) / (k * (k - 1)))


@dataclass
class LogRegModel:
    """Multinomial logistic regression on standardized features.

    ``weights`` has one row per class; the last column is the bias.
    """

    weights: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("logistic weights must be finite")

    def logits(self, features) -> np.ndarray:
        Z = (as_matrix(features, "features") - self.mean) / self.scale
        return Z @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, features) -> np.ndarray:
        return self.classes[np.argmax(self.logits(features), axis=1)]


def _softmax(S: np.ndarray) -> np.ndarray:
    S = S - S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def logreg_fit(features, labels, l2: float = 1e-4, iters: int = 5000, tol: float = 1e-8) -> LogRegModel:
    """Full-batch gradient descent on the L2-penalized multinomial log loss.

    Features are standardized internally (constant columns are left
    unscaled).  The step size is ``1 / L`` for the Lipschitz bound
    ``L = 0.5 * ||[X 1]||_2^2 / n + l2``, so the iterates decrease the
    objective monotonically and the result is deterministic.
    """
    X = as_matrix(features, "features")
    y = np.asarray(labels)
    if y.shape != (X.shape[0],):
        raise ValueError("labels must have one entry per feature row")
    classes, yi = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("logistic regression needs at least two classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = np.hstack([(X - mean) / scale, np.ones((X.shape[0], 1))])
    n, p = Z.shape
    k = classes.size
    Yh = np.eye(k)[yi]
    lip = 0.5 * np.linalg.norm(Z, 2) ** 2 / n + l2
    step = 1.0 / lip
    W = np.zeros((k, p))
    pen = np.ones(p)
    pen[-1] = 0.0  # the bias is not penalized
    for _ in range(iters):
        P = _softmax(Z @ W.T)
        grad = (P - Yh).T @ Z / n + l2 * W * pen
        if np.linalg.norm(grad) < tol:
            break
        W -= step * grad
    return LogRegModel(W, classes, mean, scale)


def logreg_accuracy(model: LogRegModel, features, labels) -> float:
    labels = np.asarray(labels)
    pred = model.predict(features)
    if pred.shape != labels.shape:
        raise ValueError("labels must have one entry per feature row")
    return float(np.mean(pred == labels))
