"""Conditional energy model ``E(x|y) = feature(x) . g(y)``.

Three modes:

* ``plain``: feature is the network output ``f(x)``.
* ``positive``: feature is ``relu(f(x))``; the network must end in a ReLU.
* ``augmented``: feature is ``(f_1, f_1^2, f_2, f_2^2, ...)`` (interleaved),
  so ``g(y)`` has length ``2 d_z`` and holds ``(g1_1, g2_1, g1_2, g2_2, ...)``.

The normalizing constant is never computed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArchitectureError
from .netcore import ForwardTrace, MlpNet, MlpSpec, build_mlp, forward, input_vjp
from .numerics import make_rng, numerical_rank

MODES = ("plain", "positive", "augmented")


def interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
    out[..., 0::2] = a
    out[..., 1::2] = b
    return out


def split_condition(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear and square coefficients of an augmented condition vector."""
    return g[..., 0::2], g[..., 1::2]


@dataclass
class ConditionEmbedding:
    """Per-segment condition vectors, either a lookup table or a network over one-hot ``y``."""

    n_segments: int
    table: np.ndarray | None = None  # (M, d_g)
    net: MlpNet | None = None

    def __post_init__(self):
        if (self.table is None) == (self.net is None):
            raise ValueError("give exactly one of table or net")
        if self.table is not None:
            self.table = np.asarray(self.table, dtype=np.float64)
            if self.table.ndim != 2 or self.table.shape[0] != self.n_segments:
                raise ValueError(f"lookup table must have {self.n_segments} rows")
        elif self.net.dims[0] != self.n_segments:
            raise ValueError("condition network input width must equal the segment count")

    @property
    def kind(self) -> str:
        return "lookup" if self.table is not None else "network"

    @property
    def dim(self) -> int:
        return self.table.shape[1] if self.table is not None else self.net.dims[-1]

    def one_hot(self, y) -> np.ndarray:
        y = np.asarray(y)
        return np.eye(self.n_segments)[y]

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y >= self.n_segments):
            raise IndexError(f"segment index out of range [0, {self.n_segments})")
        if self.table is not None:
            return self.table[y]
        return forward(self.net, self.one_hot(y)).output

    def copy(self) -> "ConditionEmbedding":
        if self.table is not None:
            return ConditionEmbedding(self.n_segments, table=self.table.copy())
        return ConditionEmbedding(self.n_segments, net=self.net.copy())


@dataclass
class IceBeemModel:
    f: MlpNet
    g: ConditionEmbedding
    mode: str = "plain"
    # Per-segment log-normalizer offsets; only the contrastive estimator uses them.
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "positive" and self.f.spec.output_activation != "relu":
            raise ArchitectureError("positive mode needs a ReLU output layer on f")
        want = 2 * self.d_z if self.mode == "augmented" else self.d_z
        if self.g.dim != want:
            raise ArchitectureError(f"condition dimension {self.g.dim} != {want} for mode {self.mode}")
        if self.offsets is None:
            self.offsets = np.zeros(self.g.n_segments)

    @property
    def d_x(self) -> int:
        return self.f.dims[0]

    @property
    def d_z(self) -> int:
        return self.f.dims[-1]

    @property
    def n_segments(self) -> int:
        return self.g.n_segments

    def copy(self) -> "IceBeemModel":
        return IceBeemModel(self.f.copy(), self.g.copy(), self.mode, self.offsets.copy())


def build_model(
    f_spec: MlpSpec,
    n_segments: int,
    mode: str = "plain",
    rng: np.random.Generator | None = None,
    *,
    g_init: str = "normal",
    g_scale: float = 1.0,
) -> IceBeemModel:
    """Fresh model with a lookup-table embedding.

    ``g_init="ones"`` gives the unconditional baseline's starting point.
    """
    if rng is None:
        rng = make_rng(f_spec.seed)
    f = build_mlp(f_spec, rng)
    d_g = 2 * f_spec.dims[-1] if mode == "augmented" else f_spec.dims[-1]
    if g_init == "ones":
        table = np.ones((n_segments, d_g))
    elif g_init == "normal":
        table = g_scale * rng.standard_normal((n_segments, d_g))
    elif g_init == "zeros":
        table = np.zeros((n_segments, d_g))
    else:
        raise ValueError(f"unknown g_init {g_init!r}")
    return IceBeemModel(f, ConditionEmbedding(n_segments, table=table), mode)


def feature_from_output(mode: str, fx: np.ndarray) -> np.ndarray:
    if mode == "positive":
        return np.maximum(fx, 0.0)
    if mode == "augmented":
        return interleave(fx, fx * fx)
    return fx


def feature(model: IceBeemModel, x) -> np.ndarray:
    return feature_from_output(model.mode, forward(model.f, x).output)


def energy(model: IceBeemModel, x, y) -> np.ndarray:
    return np.sum(feature(model, x) * model.g(y), axis=-1)


def effective_condition_from_values(mode: str, fx: np.ndarray, gy: np.ndarray):
    """``(v_eff, sensitivity)`` with ``score = -J_f^T v_eff``.

    ``sensitivity`` is the diagonal of ``d v_eff / d f`` (``2 g2`` in augmented
    mode, ``None`` otherwise since ``v_eff`` is locally constant in ``f``).
    """
    if mode == "plain":
        return gy, None
    if mode == "positive":
        return gy * (fx > 0.0), None
    g1, g2 = split_condition(gy)
    return g1 + 2.0 * fx * g2, 2.0 * g2


def effective_condition(model: IceBeemModel, trace: ForwardTrace, y):
    return effective_condition_from_values(model.mode, trace.output, model.g(y))


def score(model: IceBeemModel, x, y) -> np.ndarray:
    """Model score ``grad_x log p(x|y) = -grad_x E(x|y)``."""
    trace = forward(model.f, x)
    v_eff, _ = effective_condition(model, trace, y)
    return -input_vjp(model.f, trace, v_eff)


def condition_rank(model: IceBeemModel, rel_tol: float = 1e-10) -> int:
    """Rank of the centred condition vectors, a proxy for the point-spread requirement on g."""
    G = model.g(np.arange(model.n_segments))
    return numerical_rank(G[1:] - G[0], rel_tol) if model.n_segments > 1 else 0
