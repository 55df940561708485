"""Synthetic nonlinear ICA / IMCA data with known latents and mixing.

Latents in segment ``y`` are zero-mean Gaussians.  In ``ica`` mode their
precisions are ``lambda(y)`` (independent components); in ``imca`` mode a
shared non-diagonal base covariance ``Sigma0`` couples them and the segment
covariance is ``(Sigma0^-1 + diag(lambda(y)))^-1``.  Observations are the
latents pushed through a square, invertible LeakyReLU(0.1) network.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .netcore import MlpNet, MlpSpec, build_mlp, forward
from .numerics import cholesky, gaussian_sample, make_rng

MIXING_SLOPE = 0.1


@dataclass(frozen=True)
class ImcaConfig:
    d: int = 5
    M: int = 8
    n_per_segment: int = 2000
    mixing_layers: int = 2
    mode: str = "imca"  # "ica" | "imca"
    lambda_range: tuple = (0.5, 3.0)
    seed: int = 0
    sigma0_eig_range: tuple = (0.5, 2.0)
    min_dependence: float = 0.15
    # "main": Sigma(y) = (Sigma0^-1 + diag(lambda))^-1; "appendix": precision Sigma0^-1 + diag(1/lambda)
    covariance_form: str = "main"
    max_condition: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "lambda_range", tuple(float(v) for v in self.lambda_range))
        object.__setattr__(self, "sigma0_eig_range", tuple(float(v) for v in self.sigma0_eig_range))
        lo, hi = self.lambda_range
        if self.d < 2 or self.M < 2 or self.mixing_layers < 1 or self.n_per_segment < 1:
            raise ConfigError("need d >= 2, M >= 2, mixing_layers >= 1, n_per_segment >= 1")
        if not 0 < lo < hi:
            raise ConfigError("lambda_range must satisfy 0 < lo < hi")
        if self.mode not in ("ica", "imca"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.covariance_form not in ("main", "appendix"):
            raise ConfigError(f"unknown covariance_form {self.covariance_form!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_range"] = list(self.lambda_range)
        d["sigma0_eig_range"] = list(self.sigma0_eig_range)
        return d


@dataclass
class LabeledDataset:
    X: np.ndarray
    Y: np.ndarray
    n_segments: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.int64)
        if self.X.ndim != 2 or self.Y.shape != (self.X.shape[0],):
            raise ValueError("X must be (n, d) and Y (n,)")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.X[mask], self.Y[mask], self.n_segments)

    def segments(self, segs, relabel: bool = False) -> "LabeledDataset":
        """Rows whose label is in ``segs``; optionally relabel them 0..len(segs)-1."""
        segs = list(segs)
        keep = np.isin(self.Y, segs)
        if not relabel:
            return self.subset(keep)
        lookup = {s: i for i, s in enumerate(segs)}
        return LabeledDataset(self.X[keep], np.array([lookup[v] for v in self.Y[keep]]), len(segs))


@dataclass
class GroundTruth:
    Z: np.ndarray
    Y: np.ndarray
    lambdas: np.ndarray  # (M, d)
    sigma0: np.ndarray | None  # None marks the factorial (ica) base measure
    mixing: MlpNet

    def segment_covariance(self, y: int, form: str = "main") -> np.ndarray:
        return segment_covariance(self.sigma0, self.lambdas[y], form)


def generate_modulations(M: int, d: int, value_range, rng: np.random.Generator) -> np.ndarray:
    lo, hi = value_range
    if not 0 < lo <= hi:
        raise ConfigError("modulation range must satisfy 0 < lo <= hi")
    lam = rng.uniform(lo, hi, size=(M, d))
    if len(np.unique(lam, axis=0)) < M:
        raise ConfigError("segment modulations are not pairwise distinct")
    return lam


def sample_ica_latents(lambdas, Y, rng: np.random.Generator) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=np.float64)[np.asarray(Y)]
    return rng.standard_normal(lam.shape) / np.sqrt(lam)


def random_spd(d: int, eig_range, rng: np.random.Generator) -> np.ndarray:
    """``Q diag(e) Q^T`` with Haar-random orthogonal ``Q`` and eigenvalues uniform in ``eig_range``."""
    lo, hi = eig_range
    if not 0 < lo <= hi:
        raise ConfigError("eigenvalue range must be positive")
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    e = rng.uniform(lo, hi, size=d)
    S = (Q * e) @ Q.T
    return 0.5 * (S + S.T)


def segment_covariance(sigma0, lam, form: str = "main") -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if sigma0 is None:
        return np.diag(1.0 / lam)
    try:
        prec0 = np.linalg.inv(sigma0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("base covariance is singular") from exc
    if form == "appendix":
        prec = prec0 + np.diag(1.0 / lam)
    else:
        prec = prec0 + np.diag(lam)
    S = np.linalg.inv(prec)
    return 0.5 * (S + S.T)


def sample_imca_latents(sigma0, lambdas, Y, rng: np.random.Generator, form: str = "main") -> np.ndarray:
    """Rows ``z_i ~ N(0, Sigma(y_i))``; segments are sampled in order of their index."""
    Y = np.asarray(Y)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    d = lambdas.shape[1]
    Z = np.empty((Y.shape[0], d))
    for y in np.unique(Y):
        rows = np.flatnonzero(Y == y)
        L = cholesky(segment_covariance(sigma0, lambdas[y], form))
        Z[rows] = gaussian_sample(np.zeros(d), L, rows.size, rng)
    return Z


def max_offdiag_correlation(S: np.ndarray) -> float:
    sd = np.sqrt(np.diag(S))
    C = S / np.outer(sd, sd)
    np.fill_diagonal(C, 0.0)
    return float(np.max(np.abs(C)))


def build_mixing(d: int, L: int, rng: np.random.Generator, max_condition: float = 50.0) -> MlpNet:
    """Square LeakyReLU(0.1) network with zero biases and well-conditioned weights."""
    if L < 1:
        raise ConfigError("mixing needs at least one layer")
    spec = MlpSpec((d,) * (L + 1), leaky_slope=MIXING_SLOPE)
    for _ in range(1000):
        net = build_mlp(spec, rng)
        if all(np.linalg.cond(W) < max_condition for W in net.weights):
            return net
    raise NumericalError("could not draw a mixing network under the condition-number cap")


def mix(net: MlpNet, Z) -> np.ndarray:
    return forward(net, Z).output


def invert_mixing(net: MlpNet, x) -> np.ndarray:
    """Exact inverse of a square LeakyReLU network by layer-wise solves."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    alpha = net.spec.leaky_slope
    for l in range(net.n_layers - 1, -1, -1):
        W, b = net.weights[l], net.biases[l]
        if W.shape[0] != W.shape[1]:
            raise ValueError("inverse needs square layers")
        if l < net.n_layers - 1:
            a = np.where(a >= 0.0, a, a / alpha)
        try:
            a = np.linalg.solve(W, (a - b).T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"mixing layer {l} is singular") from exc
    return a[0] if single else a


def _draw_sigma0(cfg: ImcaConfig, lambdas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Reject base covariances that leave some segment nearly decorrelated.
    for _ in range(10_000):
        S0 = random_spd(cfg.d, cfg.sigma0_eig_range, rng)
        if all(
            max_offdiag_correlation(segment_covariance(S0, lam, cfg.covariance_form)) >= cfg.min_dependence
            for lam in lambdas
        ):
            return S0
    raise NumericalError("could not draw a base covariance with the requested dependence")


def generate_dataset(cfg: ImcaConfig) -> tuple[LabeledDataset, GroundTruth]:
    """Pure function of ``cfg``: segments of equal size, ``X = mixing(Z)``."""
    lam_rng, sig_rng, z_rng, mix_rng = (make_rng(cfg.seed, k) for k in range(4))
    lambdas = generate_modulations(cfg.M, cfg.d, cfg.lambda_range, lam_rng)
    Y = np.repeat(np.arange(cfg.M), cfg.n_per_segment)
    if cfg.mode == "ica":
        sigma0 = None
        Z = sample_ica_latents(lambdas, Y, z_rng)
    else:
        sigma0 = _draw_sigma0(cfg, lambdas, sig_rng)
        Z = sample_imca_latents(sigma0, lambdas, Y, z_rng, cfg.covariance_form)
    mixing = build_mixing(cfg.d, cfg.mixing_layers, mix_rng, cfg.max_condition)
    X = mix(mixing, Z)
    return LabeledDataset(X, Y, cfg.M), GroundTruth(Z, Y, lambdas, sigma0, mixing)


def write_dataset_csv(path, X, Y, prefix: str = "x") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}_{j}" for j in range(X.shape[1])] + ["y"])
        for row, y in zip(X, Y):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def read_dataset_csv(path, n_segments: int | None = None) -> LabeledDataset:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[-1] != "y":
            raise ConfigError(f"{path}: last column must be 'y'")
        rows = [row for row in r if row]
    X = np.array([[float(v) for v in row[:-1]] for row in rows]).reshape(len(rows), len(header) - 1)
    Y = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    M = n_segments if n_segments is not None else (int(Y.max()) + 1 if Y.size else 0)
    return LabeledDataset(X, Y, M)


def condition_numbers(net: MlpNet) -> list:
    return [float(np.linalg.cond(W)) for W in net.weights]

