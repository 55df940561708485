"""LeakyReLU multilayer perceptrons with recorded activation masks.

A network maps ``x`` through ``L`` affine layers with a LeakyReLU between
consecutive layers.  The last layer is linear, or ReLU-clamped when
``output_activation == "relu"``.  The forward pass records, per layer, the
diagonal of the slope matrix (1 or ``alpha``), so that within one linear
region the input Jacobian is exactly ``D_L W_L ... D_1 W_1``.

All functions accept either a single vector or a batch of row vectors.
Gradients with respect to parameters are summed over the batch.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ArchitectureError, NumericalError
from .numerics import make_rng, numerical_rank, svd

RANK_TOL = 1e-10
MAX_DRAWS = 10
EXHAUSTIVE_SUBMATRIX_LIMIT = 10_000


@dataclass(frozen=True)
class MlpSpec:
    dims: tuple[int, ...]
    leaky_slope: float = 0.1
    output_activation: str = "none"  # "none" | "relu"
    seed: int = 0
    unchecked: bool = False  # skip the monotone-width rule

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ArchitectureError(f"invalid layer widths {self.dims}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ArchitectureError("leaky_slope must lie in (0, 1)")
        if self.output_activation not in ("none", "relu"):
            raise ArchitectureError(f"unknown output activation {self.output_activation!r}")
        if not self.unchecked and not self.is_monotone():
            raise ArchitectureError(
                f"layer widths {self.dims} are neither non-increasing nor non-decreasing"
            )

    def is_monotone(self) -> bool:
        d = self.dims
        pairs = list(zip(d[:-1], d[1:]))
        return all(a >= b for a, b in pairs) or all(a <= b for a, b in pairs)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1


@dataclass
class MlpNet:
    spec: MlpSpec
    weights: list  # W_l has shape (dims[l], dims[l-1])
    biases: list

    @property
    def dims(self) -> tuple[int, ...]:
        return self.spec.dims

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpNet":
        return MlpNet(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list:
        return [*self.weights, *self.biases]


class NetGrads(NamedTuple):
    weights: list
    biases: list

    def params(self) -> list:
        return [*self.weights, *self.biases]

    @classmethod
    def zeros_like(cls, net: MlpNet) -> "NetGrads":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


@dataclass
class ForwardTrace:
    input: np.ndarray
    pre_activations: list
    masks: list  # per layer; 1 or alpha (output layer: 1, or 0 where a ReLU clamps)
    output: np.ndarray
    activations: list = field(repr=False)  # activations[l] feeds layer l (activations[0] is the input)

    @property
    def batched(self) -> bool:
        return self.input.ndim == 2


def _layer_slopes(spec: MlpSpec) -> list:
    """Negative-side slope per layer; the output layer is 1 (linear) or 0 (ReLU)."""
    out = 0.0 if spec.output_activation == "relu" else 1.0
    return [spec.leaky_slope] * (spec.n_layers - 1) + [out]


def build_mlp(spec: MlpSpec, rng: np.random.Generator | None = None, *, zero_bias: bool = True) -> MlpNet:
    """Gaussian weights scaled by 1/sqrt(fan_in), redrawn until every layer is full rank."""
    if rng is None:
        rng = make_rng(spec.seed)
    weights, biases = [], []
    for d_in, d_out in zip(spec.dims[:-1], spec.dims[1:]):
        for _ in range(MAX_DRAWS):
            W = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
            if numerical_rank(W, RANK_TOL) == min(d_out, d_in):
                break
        else:
            raise ArchitectureError(f"{MAX_DRAWS} consecutive rank-deficient draws for a {d_out}x{d_in} layer")
        weights.append(W)
        biases.append(np.zeros(d_out) if zero_bias else 0.1 * rng.standard_normal(d_out))
    return MlpNet(spec, weights, biases)


def _check_input(net: MlpNet, x, name: str = "x", width: int | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    width = net.dims[0] if width is None else width
    if a.ndim not in (1, 2) or a.shape[-1] != width:
        raise ValueError(f"{name} must have trailing dimension {width}, got shape {a.shape}")
    return a


def forward(net: MlpNet, x) -> ForwardTrace:
    x = _check_input(net, x)
    slopes = _layer_slopes(net.spec)
    a = x
    pre, masks, acts = [], [], [x]
    for W, b, alpha in zip(net.weights, net.biases, slopes):
        z = a @ W.T + b
        m = np.where(z >= 0.0, 1.0, alpha)
        a = z * m
        pre.append(z)
        masks.append(m)
        acts.append(a)
    return ForwardTrace(x, pre, masks, a, acts)


def output(net: MlpNet, x) -> np.ndarray:
    return forward(net, x).output


def _check_trace(net: MlpNet, trace: ForwardTrace) -> None:
    if len(trace.masks) != net.n_layers or trace.input.shape[-1] != net.dims[0]:
        raise ValueError("trace was not produced by this network")


def input_jvp(net: MlpNet, trace: ForwardTrace, u) -> np.ndarray:
    """J_f(x) @ u using the masks frozen in ``trace``."""
    _check_trace(net, trace)
    u = _check_input(net, u, "u")
    for W, m in zip(net.weights, trace.masks):
        u = (u @ W.T) * m
    return u


def input_vjp(net: MlpNet, trace: ForwardTrace, v) -> np.ndarray:
    """J_f(x)^T @ v by a reverse sweep over the frozen masks."""
    _check_trace(net, trace)
    v = _check_input(net, v, "v", net.dims[-1])
    for W, m in zip(reversed(net.weights), reversed(trace.masks)):
        v = (v * m) @ W
    return v


def jacobian(net: MlpNet, trace: ForwardTrace) -> np.ndarray:
    """Full input Jacobian at an unbatched point, assembled column by column."""
    if trace.batched:
        raise ValueError("jacobian needs an unbatched trace")
    d0 = net.dims[0]
    return np.stack([input_jvp(net, trace, e) for e in np.eye(d0)], axis=1)


def param_grad_scalar(net: MlpNet, trace: ForwardTrace, out_grad) -> NetGrads:
    """Gradient of ``sum(out_grad * f(x))`` with respect to every weight and bias."""
    _check_trace(net, trace)
    delta = _check_input(net, out_grad, "out_grad", net.dims[-1])
    if delta.ndim != trace.input.ndim:
        raise ValueError("out_grad and trace disagree on batching")
    gW = [None] * net.n_layers
    gb = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        delta = delta * trace.masks[l]
        a_prev = trace.activations[l]
        if delta.ndim == 1:
            gW[l] = np.outer(delta, a_prev)
            gb[l] = delta.copy()
        else:
            gW[l] = delta.T @ a_prev
            gb[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
    return NetGrads(gW, gb)


def score_loss_from_trace(net: MlpNet, trace: ForwardTrace, v, target):
    """Core of :func:`param_grad_score_loss` for an existing forward trace.

    Within a linear region ``s = -J^T v`` is multilinear in the weights, and
    ``d loss / d W_l = -delta_l u_{l-1}^T`` where ``delta_l`` is the reverse
    sweep of ``v`` down to layer ``l`` and ``u_{l-1}`` is the forward push of
    the residual ``r = 2 (s - target)`` up to layer ``l - 1``.  Biases only
    move the masks, so their gradient through this path is zero.

    Returns ``(loss, grads, v_grad, score)``; ``loss`` sums over a batch.
    """
    _check_trace(net, trace)
    v = _check_input(net, v, "v", net.dims[-1])
    target = _check_input(net, target, "target")
    L = net.n_layers
    deltas = [None] * L
    delta = v
    for l in range(L - 1, -1, -1):
        delta = delta * trace.masks[l]
        deltas[l] = delta
        delta = delta @ net.weights[l]
    s = -delta
    diff = s - target
    loss = float(np.sum(diff * diff))
    if not math.isfinite(loss):
        raise NumericalError("score loss is not finite")
    u = 2.0 * diff
    gW = []
    for l in range(L):
        if u.ndim == 1:
            gW.append(-np.outer(deltas[l], u))
        else:
            gW.append(-(deltas[l].T @ u))
        u = (u @ net.weights[l].T) * trace.masks[l]
    grads = NetGrads(gW, [np.zeros_like(b) for b in net.biases])
    return loss, grads, -u, s


def param_grad_score_loss(net: MlpNet, x, v, target):
    """Loss ``||-J_f(x)^T v - target||^2`` with its parameter gradients and ``d loss / d v``."""
    loss, grads, v_grad, _ = score_loss_from_trace(net, forward(net, x), v, target)
    return loss, grads, v_grad


class RankProbe(NamedTuple):
    min_rank: int
    min_sigma: float
    full_rank: int  # min(d_0, d_L), the rank a healthy network reaches


def jacobian_rank_probe(net: MlpNet, n_points: int, rng: np.random.Generator, rel_tol: float = RANK_TOL) -> RankProbe:
    """Minimum numerical rank and smallest singular value of J_f over random Gaussian inputs."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    min_rank = None
    min_sigma = math.inf
    for x in rng.standard_normal((n_points, net.dims[0])):
        J = jacobian(net, forward(net, x))
        s = svd(J)[1]
        rank = int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0
        min_rank = rank if min_rank is None else min(min_rank, rank)
        min_sigma = min(min_sigma, float(s[-1]))
    return RankProbe(min_rank, min_sigma, min(net.dims[0], net.dims[-1]))


@dataclass
class SubmatrixLayerReport:
    layer: int
    shape: tuple
    n_checked: int
    exhaustive: bool
    min_sigma: float
    failures: list  # row subsets found singular


def check_submatrix_invertibility(
    net: MlpNet, n_samples: int, rng: np.random.Generator, rel_tol: float = RANK_TOL
) -> list:
    """Check that every square row-submatrix of each expanding layer is invertible.

    Only layers whose output width exceeds their input width are examined.
    Subsets are enumerated when there are at most 10^4 of them, otherwise
    ``n_samples`` random subsets are drawn.
    """
    reports = []
    for idx, W in enumerate(net.weights):
        d_out, d_in = W.shape
        if d_out <= d_in:
            continue
        total = math.comb(d_out, d_in)
        if total <= EXHAUSTIVE_SUBMATRIX_LIMIT:
            subsets = itertools.combinations(range(d_out), d_in)
            exhaustive = True
        else:
            subsets = (tuple(sorted(rng.choice(d_out, d_in, replace=False))) for _ in range(n_samples))
            exhaustive = False
        scale = svd(W)[1][0]
        min_sigma = math.inf
        failures = []
        n_checked = 0
        for rows in subsets:
            sigma = float(svd(W[list(rows)])[1][-1])
            n_checked += 1
            min_sigma = min(min_sigma, sigma)
            if sigma <= rel_tol * scale:
                failures.append(list(rows))
        reports.append(SubmatrixLayerReport(idx, W.shape, n_checked, exhaustive, min_sigma, failures))
    return reports


def layer_ranks(net: MlpNet, rel_tol: float = RANK_TOL) -> list:
    """(layer index, rank, full rank) for every weight matrix."""
    return [(i, numerical_rank(W, rel_tol), min(W.shape)) for i, W in enumerate(net.weights)]
