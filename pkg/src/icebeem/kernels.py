"""Backend selection for the fused score-loss kernel.

Two implementations compute the same sums: a compiled per-sample loop and
a numpy version that works on whole batches through BLAS.  The compiled
loop wins for narrow networks, where numpy's per-call overhead dominates,
and loses once layers are wide enough for matrix products to pay off (see
``benchmarks/bench_kernels.py``).  With the default ``auto`` policy the
compiled kernel is used when it was built and the widest layer is at most
``AUTO_MAX_WIDTH``; otherwise numpy is used.  ``ICEBEEM_BACKEND`` may be set
to ``python`` or ``cython`` to force one implementation.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from ._kernels_py import MODE_CODES
from .netcore import MlpNet, NetGrads

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = ("python",) + (("cython",) if _ckernels is not None else ())
AUTO_MAX_WIDTH = 8  # crossover measured by benchmarks/bench_kernels.py


def _initial_backend() -> str:
    forced = os.environ.get("ICEBEEM_BACKEND", "auto")
    if forced not in ("auto", "python", "cython"):
        raise ValueError(f"ICEBEEM_BACKEND must be auto, python or cython, not {forced!r}")
    if forced == "cython" and _ckernels is None:
        return "python"
    return forced


BACKEND = _initial_backend()


def resolve_backend(net: MlpNet, backend: str | None = None) -> str:
    """Concrete backend for ``net`` under the requested (or module default) policy."""
    backend = backend or BACKEND
    if backend != "auto":
        return backend
    if _ckernels is not None and max(net.dims) <= AUTO_MAX_WIDTH:
        return "cython"
    return "python"


def _score_loss_batch_cython(net: MlpNet, mode: str, G, X, T):
    spec = net.spec
    dims = np.asarray(spec.dims, dtype=np.int64)
    Wf = np.concatenate([w.ravel() for w in net.weights])
    bf = np.concatenate(net.biases)
    loss, gW, gb, gG = _ckernels.score_loss_batch_packed(
        dims,
        Wf,
        bf,
        float(spec.leaky_slope),
        spec.output_activation == "relu",
        MODE_CODES[mode],
        np.ascontiguousarray(G, dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(T, dtype=np.float64),
    )
    weights, biases = [], []
    wo = bo = 0
    for w, b in zip(net.weights, net.biases):
        weights.append(gW[wo:wo + w.size].reshape(w.shape))
        biases.append(gb[bo:bo + b.size])
        wo += w.size
        bo += b.size
    return float(loss), NetGrads(weights, biases), gG


def score_loss_batch(net: MlpNet, mode: str, G, X, T, backend: str | None = None):
    """Summed CDSM-style score loss over a batch, its f-gradients and per-row condition gradients."""
    backend = resolve_backend(net, backend)
    if backend == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _score_loss_batch_cython(net, mode, G, X, T)
    if backend == "python":
        return _kernels_py.score_loss_batch(net, mode, np.asarray(G, float), np.asarray(X, float), np.asarray(T, float))
    raise ValueError(f"unknown backend {backend!r}")
