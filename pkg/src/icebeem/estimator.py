"""Training objectives and loops.

* Conditional denoising score matching (CDSM): match the model score at
  ``x~ = x + sigma eps`` to the Gaussian-kernel score ``(x - x~) / sigma^2``.
* Conditional contrastive estimation (CFCE): logistic discrimination of data
  pairs ``(x, y)`` against pairs drawn from a fixed per-segment Gaussian
  contrast, with learnable per-segment log-normalizer offsets.
* Time-contrastive learning (TCL): segment classification on top of an
  absolute-value feature layer; a baseline feature extractor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ebm import (
    ConditionEmbedding,
    IceBeemModel,
    effective_condition_from_values,
    energy,
    feature_from_output,
    score,
)
from .errors import NumericalError
from .imcagen import LabeledDataset
from .kernels import score_loss_batch
from .netcore import MlpNet, MlpSpec, NetGrads, build_mlp, forward, param_grad_scalar
from .numerics import cholesky, make_rng

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: list, grads: list) -> tuple[list, AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place (no amsgrad, no weight decay)."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state lengths differ")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to Adam")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError("parameter and gradient shapes differ")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _momentum_step(params, grads, bufs, lr: float, momentum: float) -> None:
    for p, g, b in zip(params, grads, bufs):
        b *= momentum
        b += g
        p -= lr * b


# --------------------------------------------------------------------------- parameter plumbing


def _g_params(model: IceBeemModel) -> list:
    return [model.g.table] if model.g.table is not None else model.g.net.params()


def _trainable(model: IceBeemModel, freeze_f: bool, freeze_g: bool, offsets: bool = False) -> list:
    params = []
    if not freeze_f:
        params += model.f.params()
    if not freeze_g:
        params += _g_params(model)
    if offsets:
        params.append(model.offsets)
    return params


def _g_grads_from_rows(model: IceBeemModel, y: np.ndarray, gG: np.ndarray):
    """Chain per-row gradients of g(y) back to the embedding's parameters."""
    if model.g.table is not None:
        out = np.zeros_like(model.g.table)
        np.add.at(out, y, gG)
        return [out]
    trace = forward(model.g.net, model.g.one_hot(y))
    return param_grad_scalar(model.g.net, trace, gG).params()


# --------------------------------------------------------------------------- CDSM


@dataclass
class CdsmConfig:
    sigma: float = 0.01
    batch_size: int = 63
    iterations: int = 5000
    lr: float = 1e-3
    seed: int = 0
    freeze_f: bool = False
    freeze_g: bool = False
    # Evaluate every drawn perturbation with both signs.  The objective is
    # unchanged; the O(1/sigma) part of the gradient noise cancels.
    antithetic: bool = False

    def __post_init__(self):
        if self.sigma <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("need sigma > 0, batch_size >= 1, iterations >= 0")


@dataclass
class CdsmGrads:
    f: NetGrads
    g: list  # [table gradient] or the condition network's parameter gradients

    def params(self, freeze_f: bool = False, freeze_g: bool = False) -> list:
        out = []
        if not freeze_f:
            out += self.f.params()
        if not freeze_g:
            out += self.g
        return out


def cdsm_loss_and_grads(
    model: IceBeemModel,
    batch: tuple,
    sigma: float,
    rng: np.random.Generator | None = None,
    *,
    noise: np.ndarray | None = None,
    freeze_f: bool = False,
    freeze_g: bool = False,
    antithetic: bool = False,
    backend: str | None = None,
) -> tuple[float, CdsmGrads]:
    """Mean CDSM loss of a batch ``(X, Y)`` and its gradients.

    ``noise`` (standard normal, same shape as X) freezes the perturbation;
    otherwise it is drawn from ``rng``.  With ``antithetic`` each row is
    evaluated at ``x + sigma eps`` and ``x - sigma eps``.
    """
    X, Y = batch
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if noise is None:
        noise = rng.standard_normal(X.shape)
    if antithetic:
        X = np.vstack([X, X])
        Y = np.concatenate([Y, Y])
        noise = np.vstack([noise, -noise])
    n = X.shape[0]
    Xt = X + sigma * noise
    T = (X - Xt) / sigma**2
    loss, gf, gG = score_loss_batch(model.f, model.mode, model.g(Y), Xt, T, backend)
    loss /= n
    if not math.isfinite(loss):
        raise NumericalError("CDSM loss is not finite")
    if freeze_f:
        gf = NetGrads.zeros_like(model.f)
    else:
        gf = NetGrads([w / n for w in gf.weights], [b / n for b in gf.biases])
    if freeze_g:
        gg = [np.zeros_like(p) for p in _g_params(model)]
    else:
        gg = [p / n for p in _g_grads_from_rows(model, Y, gG)]
    return loss, CdsmGrads(gf, gg)


def train_cdsm(model: IceBeemModel, data: LabeledDataset, cfg: CdsmConfig, backend: str | None = None):
    """Adam on uniformly drawn minibatches.  Returns ``(trained copy, loss history)``."""
    if data.n_segments > model.n_segments or (len(data) and data.Y.max() >= model.n_segments):
        raise ValueError("data has more segments than the model")
    model = model.copy()
    history = np.zeros(cfg.iterations)
    if cfg.iterations == 0:
        return model, history
    rng = make_rng(cfg.seed)
    params = _trainable(model, cfg.freeze_f, cfg.freeze_g)
    state = AdamState.for_params(params, cfg.lr)
    n = len(data)
    for it in range(cfg.iterations):
        idx = rng.integers(0, n, cfg.batch_size)
        try:
            loss, grads = cdsm_loss_and_grads(
                model,
                (data.X[idx], data.Y[idx]),
                cfg.sigma,
                rng,
                freeze_f=cfg.freeze_f,
                freeze_g=cfg.freeze_g,
                antithetic=cfg.antithetic,
                backend=backend,
            )
            adam_step(state, params, grads.params(cfg.freeze_f, cfg.freeze_g))
        except NumericalError as exc:
            raise NumericalError(f"CDSM iteration {it}: {exc}") from exc
        history[it] = loss
    return model, history


def cdsm_eval_score(model: IceBeemModel, data: LabeledDataset, sigma: float = 0.01, seed: int = 0) -> float:
    """Mean CDSM loss over the whole dataset with noise drawn from ``seed``."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    noise = make_rng(seed).standard_normal(data.X.shape)
    Xt = data.X + sigma * noise
    resid = score(model, Xt, data.Y) + noise / sigma
    return float(np.mean(np.sum(resid * resid, axis=1)))


# --------------------------------------------------------------------------- contrastive estimation


@dataclass
class ContrastNoise:
    """Per-segment full-covariance Gaussians ``q(x|y)``."""

    means: np.ndarray  # (M, d)
    chols: np.ndarray  # (M, d, d) lower triangular

    @property
    def n_segments(self) -> int:
        return self.means.shape[0]

    def log_density(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y)
        out = np.empty(X.shape[0])
        d = X.shape[1]
        for y in np.unique(Y):
            rows = Y == y
            L = self.chols[y]
            r = np.linalg.solve(L, (X[rows] - self.means[y]).T)
            out[rows] = -0.5 * np.sum(r * r, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * LOG_2PI
        return out

    def sample(self, Y, rng: np.random.Generator) -> np.ndarray:
        Y = np.asarray(Y)
        eps = rng.standard_normal((Y.shape[0], self.means.shape[1]))
        return self.means[Y] + np.einsum("nij,nj->ni", self.chols[Y], eps)


def fit_contrast_noise(data: LabeledDataset, ridge: float = 1e-6) -> ContrastNoise:
    d = data.d
    means = np.zeros((data.n_segments, d))
    chols = np.zeros((data.n_segments, d, d))
    for y in range(data.n_segments):
        Xy = data.X[data.Y == y]
        if Xy.shape[0] < d + 2:
            raise ValueError(f"segment {y} has {Xy.shape[0]} samples; need at least {d + 2}")
        means[y] = Xy.mean(axis=0)
        C = np.cov(Xy, rowvar=False).reshape(d, d) + ridge * np.eye(d)
        chols[y] = cholesky(0.5 * (C + C.T))
    return ContrastNoise(means, chols)


@dataclass
class CfceConfig:
    batch_size: int = 63
    iterations: int = 5000
    lr: float = 3e-4
    seed: int = 0
    freeze_f: bool = False
    freeze_g: bool = False


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_odds(model: IceBeemModel, noise: ContrastNoise, X, Y) -> np.ndarray:
    """``log p_model(x|y) - log q(x|y)`` with the model normalized by its offsets."""
    Y = np.asarray(Y)
    return -energy(model, X, Y) + model.offsets[Y] - noise.log_density(X, Y)


def cfce_loss(logodds_data: np.ndarray, logodds_noise: np.ndarray) -> float:
    """Logistic loss per (data, noise) pair; 2 log 2 at chance."""
    return float(np.mean(_softplus(-logodds_data)) + np.mean(_softplus(logodds_noise)))


def cfce_loss_and_grads(model: IceBeemModel, noise: ContrastNoise, data_batch, noise_batch, freeze_f=False, freeze_g=False):
    Xd, Yd = data_batch
    Xn, Yn = noise_batch
    X = np.vstack([Xd, Xn])
    Y = np.concatenate([Yd, Yn])
    nd, nn = len(Yd), len(Yn)
    trace = forward(model.f, X)
    fx = trace.output
    gy = model.g(Y)
    feats = feature_from_output(model.mode, fx)
    E = np.sum(feats * gy, axis=1)
    ell = -E + model.offsets[Y] - noise.log_density(X, Y)
    loss = cfce_loss(ell[:nd], ell[nd:])
    if not math.isfinite(loss):
        raise NumericalError("CFCE loss is not finite")
    dell = np.concatenate([(_sigmoid(ell[:nd]) - 1.0) / nd, _sigmoid(ell[nd:]) / nn])
    dE = -dell
    v_eff, _ = effective_condition_from_values(model.mode, fx, gy)
    gf = NetGrads.zeros_like(model.f) if freeze_f else param_grad_scalar(model.f, trace, dE[:, None] * v_eff)
    gg = (
        [np.zeros_like(p) for p in _g_params(model)]
        if freeze_g
        else _g_grads_from_rows(model, Y, dE[:, None] * feats)
    )
    goff = np.zeros_like(model.offsets)
    np.add.at(goff, Y, dell)
    return loss, gf, gg, goff


def train_cfce(model: IceBeemModel, data: LabeledDataset, cfg: CfceConfig, noise: ContrastNoise | None = None):
    """Returns ``(trained copy, loss history, contrast noise)``."""
    model = model.copy()
    history = np.zeros(cfg.iterations)
    if noise is None:
        noise = fit_contrast_noise(data)
    if cfg.iterations == 0:
        return model, history, noise
    rng = make_rng(cfg.seed)
    params = _trainable(model, cfg.freeze_f, cfg.freeze_g, offsets=True)
    state = AdamState.for_params(params, cfg.lr)
    n = len(data)
    M = noise.n_segments
    for it in range(cfg.iterations):
        idx = rng.integers(0, n, cfg.batch_size)
        yn = rng.integers(0, M, cfg.batch_size)
        xn = noise.sample(yn, rng)
        try:
            loss, gf, gg, goff = cfce_loss_and_grads(
                model, noise, (data.X[idx], data.Y[idx]), (xn, yn), cfg.freeze_f, cfg.freeze_g
            )
            grads = ([] if cfg.freeze_f else gf.params()) + ([] if cfg.freeze_g else gg) + [goff]
            adam_step(state, params, grads)
        except NumericalError as exc:
            raise NumericalError(f"CFCE iteration {it}: {exc}") from exc
        history[it] = loss
    return model, history, noise


def cfce_accuracy(model: IceBeemModel, noise: ContrastNoise, data: LabeledDataset, seed: int = 0) -> float:
    """Accuracy of the sign of the log-odds on data pairs and an equal number of noise pairs."""
    rng = make_rng(seed)
    yn = rng.integers(0, noise.n_segments, len(data))
    xn = noise.sample(yn, rng)
    hit_d = log_odds(model, noise, data.X, data.Y) > 0
    hit_n = log_odds(model, noise, xn, yn) <= 0
    return float((hit_d.sum() + hit_n.sum()) / (2 * len(data)))


# --------------------------------------------------------------------------- TCL


@dataclass
class TclConfig:
    batch_size: int = 63
    iterations: int = 5000
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "momentum"
    momentum: float = 0.9
    lr_decay: float = 0.1  # momentum optimizer: lr * lr_decay ** (it / iterations)


@dataclass
class TclResult:
    net: MlpNet
    classifier_W: np.ndarray  # (M, d)
    classifier_b: np.ndarray
    history: np.ndarray = field(repr=False)  # minibatch accuracy per iteration

    def features(self, X) -> np.ndarray:
        return tcl_features(self.net, X)

    def accuracy(self, data: LabeledDataset) -> float:
        logits = self.features(data.X) @ self.classifier_W.T + self.classifier_b
        return float(np.mean(np.argmax(logits, axis=1) == data.Y))


def tcl_features(net: MlpNet, X) -> np.ndarray:
    return np.abs(forward(net, X).output)


def tcl_spec(d: int, layers: int, seed: int = 0, slope: float = 0.1) -> MlpSpec:
    """``d -> 2d -> d ... -> d`` with ``layers`` affine maps; widths are not monotone."""
    dims = (d, 2 * d) + (d,) * (layers - 1) if layers >= 2 else (d, d)
    return MlpSpec(dims, leaky_slope=slope, seed=seed, unchecked=True)


def train_tcl(data: LabeledDataset, spec: MlpSpec, cfg: TclConfig) -> TclResult:
    """Multinomial logistic regression of segment index on absolute-value features."""
    if spec.dims[-1] != data.d:
        raise ValueError("TCL feature width must equal the data dimension")
    rng = make_rng(cfg.seed)
    net = build_mlp(spec, rng)
    M = data.n_segments
    Wc = 0.1 * rng.standard_normal((M, spec.dims[-1]))
    bc = np.zeros(M)
    params = net.params() + [Wc, bc]
    if cfg.optimizer == "adam":
        state = AdamState.for_params(params, cfg.lr)
    elif cfg.optimizer == "momentum":
        bufs = [np.zeros_like(p) for p in params]
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    history = np.zeros(cfg.iterations)
    n = len(data)
    for it in range(cfg.iterations):
        idx = rng.integers(0, n, cfg.batch_size)
        X, Y = data.X[idx], data.Y[idx]
        trace = forward(net, X)
        h = np.abs(trace.output)
        logits = h @ Wc.T + bc
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        history[it] = np.mean(np.argmax(P, axis=1) == Y)
        dlog = P
        dlog[np.arange(len(Y)), Y] -= 1.0
        dlog /= len(Y)
        gWc = dlog.T @ h
        gbc = dlog.sum(axis=0)
        dh = dlog @ Wc
        gnet = param_grad_scalar(net, trace, dh * np.sign(trace.output))
        grads = gnet.params() + [gWc, gbc]
        if cfg.optimizer == "adam":
            adam_step(state, params, grads)
        else:
            lr = cfg.lr * cfg.lr_decay ** (it / max(cfg.iterations, 1))
            _momentum_step(params, grads, bufs, lr, cfg.momentum)
    return TclResult(net, Wc, bc, history)


# --------------------------------------------------------------------------- transfer


def fit_g_new_segment(
    model: IceBeemModel,
    X_new,
    cfg: CdsmConfig,
    g_init=None,
    eval_seed: int = 0,
    keep_best: bool = True,
):
    """Learn one condition vector for unseen data with ``f`` frozen.

    Returns ``(g_new, cdsm_score, init_score)``; both scores are evaluated on
    ``X_new`` with noise drawn from ``eval_seed``.  ``g_init`` defaults to all
    ones.  With ``keep_best`` the starting vector is returned when training
    did not lower the score, so ``cdsm_score <= init_score`` always holds.
    """
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.shape[0] == 0:
        raise ValueError("no data for the new segment")
    d_g = model.g.dim
    g0 = np.ones(d_g) if g_init is None else np.asarray(g_init, dtype=np.float64).copy()
    if g0.shape != (d_g,):
        raise ValueError(f"g_init must have length {d_g}")
    sub = IceBeemModel(model.f, ConditionEmbedding(1, table=g0[None, :]), model.mode)
    data = LabeledDataset(X_new, np.zeros(X_new.shape[0], dtype=np.int64), 1)
    init_score = cdsm_eval_score(sub, data, cfg.sigma, eval_seed)
    trained, _ = train_cdsm(sub, data, replace(cfg, freeze_f=True, freeze_g=False))
    fitted_score = cdsm_eval_score(trained, data, cfg.sigma, eval_seed)
    if keep_best and not fitted_score <= init_score:
        return g0, init_score, init_score
    return trained.g.table[0].copy(), fitted_score, init_score
