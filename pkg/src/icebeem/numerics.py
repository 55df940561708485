"""Dense linear algebra, seeded randomness, assignment and CCA.

Everything here is a pure function of its inputs.  Randomness goes through
:func:`make_rng`, which always builds a Philox (counter-based, 64-bit)
generator so that a seed reproduces the same stream on every platform.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DegenerateColumnError, NotPositiveDefiniteError, NumericalError

CCA_RIDGE = 1e-8

# Lexicographic tie-breaking re-solves O(n^2) subproblems; only worth it for
# the small matrices MCC produces.
_TIE_BREAK_MAX_N = 12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed``; extra integers select an independent child stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for handing to an independent consumer."""
    return int(rng.integers(0, 2**63 - 1))


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U @ diag(s) @ Vt`` with ``s`` descending."""
    a = as_matrix(m)
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc


def numerical_rank(m, rel_tol: float = 1e-10) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    s = svd(m)[1]
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def cholesky(spd) -> np.ndarray:
    a = as_matrix(spd)
    if a.shape[0] != a.shape[1]:
        raise ValueError("cholesky needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("cholesky input is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


def gaussian_sample(mean, chol_lower, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows drawn as ``mean + L @ eps`` with ``eps`` standard normal."""
    mu = np.asarray(mean, dtype=np.float64)
    L = np.asarray(chol_lower, dtype=np.float64)
    d = mu.shape[0]
    if mu.ndim != 1 or L.shape != (d, d):
        raise ValueError(f"dimension mismatch: mean {mu.shape}, factor {L.shape}")
    eps = rng.standard_normal((n, d))
    return mu + eps @ L.T


class Assignment(NamedTuple):
    permutation: np.ndarray  # permutation[i] is the column assigned to row i
    total: float


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path with dual potentials; returns row -> column."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            if not np.isfinite(delta):
                raise NumericalError("assignment failed: no augmenting path")
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def _lowest_index_optimum(cost: np.ndarray, best: float) -> np.ndarray:
    """Lexicographically smallest permutation attaining ``best`` (minimisation)."""
    n = cost.shape[0]
    tol = 1e-12 * (1.0 + abs(best))
    rows = list(range(n))
    cols = list(range(n))
    perm = np.empty(n, dtype=np.int64)
    acc = 0.0
    for i in rows:
        rest_rows = [r for r in rows if r > i]
        for j in sorted(cols):
            rest_cols = [c for c in cols if c != j]
            value = acc + cost[i, j]
            if rest_rows:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                value += float(sub[np.arange(len(rest_rows)), _hungarian_min(sub)].sum())
            if value <= best + tol:
                perm[i] = j
                acc += cost[i, j]
                cols.remove(j)
                break
        else:  # pragma: no cover - guarded by tolerance
            raise NumericalError("tie-breaking lost the optimum")
    return perm


def linear_sum_assignment(cost, maximize: bool = False) -> Assignment:
    """Optimal one-to-one assignment of rows to columns of a square cost matrix.

    Ties are broken towards the lexicographically smallest permutation for
    matrices up to 12x12, which keeps MCC reports deterministic.
    """
    c = as_matrix(cost, "cost")
    n, m = c.shape
    if n != m:
        raise ValueError(f"cost matrix must be square, got {c.shape}")
    if n == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    work = -c if maximize else c
    perm = _hungarian_min(work)
    if n <= _TIE_BREAK_MAX_N:
        best = float(work[np.arange(n), perm].sum())
        perm = _lowest_index_optimum(work, best)
    return Assignment(perm, float(c[np.arange(n), perm].sum()))


def _centre(X: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Centred columns and their sums of squares; rejects zero-variance columns."""
    mu = X.mean(axis=0)
    Xc = X - mu
    ss = np.sum(Xc * Xc, axis=0)
    bad = np.sqrt(ss / X.shape[0]) <= 1e-12 * np.maximum(np.abs(mu), 1e-300)
    if np.any(bad):
        raise DegenerateColumnError(f"{name} has zero-variance column(s) {np.flatnonzero(bad).tolist()}")
    return Xc, ss


def pearson_abs_corr(X, Y) -> np.ndarray:
    """Matrix of absolute Pearson correlations between columns of X and of Y."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y need the same number of rows")
    if X.shape[0] < 3:
        raise ValueError("need at least 3 rows for correlations")
    Xc, sx = _centre(X, "X")
    Yc, sy = _centre(Y, "Y")
    # Dividing by sqrt(sx * sy) rather than normalizing each block first
    # makes identical columns correlate exactly 1.
    C = (Xc.T @ Yc) / np.sqrt(np.outer(sx, sy))
    return np.clip(np.abs(C), 0.0, 1.0)


class CcaResult(NamedTuple):
    proj_x: np.ndarray  # p x k
    proj_y: np.ndarray  # q x k
    corrs: np.ndarray  # k, descending


def _inv_sqrt(C: np.ndarray, name: str) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    if w[0] <= 0.0 or not np.all(np.isfinite(w)):
        raise NumericalError(f"{name} covariance is rank deficient even after ridge")
    return (V / np.sqrt(w)) @ V.T


def cca(X, Y, k: int | None = None) -> CcaResult:
    """Canonical correlation analysis by whitening and an SVD of the cross-covariance.

    Projected variates ``(X - mean) @ proj_x`` have unit variance (up to the
    1e-8 ridge) and pairwise correlations ``corrs``.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    n, p = X.shape
    q = Y.shape[1]
    if Y.shape[0] != n:
        raise ValueError("X and Y need the same number of rows")
    if k is None:
        k = min(p, q)
    if not 1 <= k <= min(p, q):
        raise ValueError(f"k must be in [1, {min(p, q)}]")
    if n <= p + q:
        raise ValueError("CCA needs more rows than p + q")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Cxx = Xc.T @ Xc / (n - 1) + CCA_RIDGE * np.eye(p)
    Cyy = Yc.T @ Yc / (n - 1) + CCA_RIDGE * np.eye(q)
    Cxy = Xc.T @ Yc / (n - 1)
    Wx = _inv_sqrt(Cxx, "X")
    Wy = _inv_sqrt(Cyy, "Y")
    U, s, Vt = svd(Wx @ Cxy @ Wy)
    return CcaResult(Wx @ U[:, :k], Wy @ Vt[:k].T, np.clip(s[:k], 0.0, 1.0))

