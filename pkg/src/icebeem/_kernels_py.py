"""Pure numpy implementation of the fused score-loss kernel."""
from __future__ import annotations

import numpy as np

from .ebm import effective_condition_from_values, interleave
from .netcore import MlpNet, NetGrads, forward, param_grad_scalar, score_loss_from_trace

MODE_CODES = {"plain": 0, "positive": 1, "augmented": 2}


def score_loss_batch(net: MlpNet, mode: str, G: np.ndarray, X: np.ndarray, T: np.ndarray):
    """Summed ``||score(x_i) - t_i||^2`` over a batch with gradients.

    ``G`` holds the condition vector of every row.  Returns
    ``(loss_sum, NetGrads, dloss/dG)``.
    """
    trace = forward(net, X)
    fx = trace.output
    v, sens = effective_condition_from_values(mode, fx, G)
    loss, grads, v_grad, _ = score_loss_from_trace(net, trace, v, T)
    if mode == "plain":
        return loss, grads, v_grad
    if mode == "positive":
        return loss, grads, v_grad * (fx > 0.0)
    extra = param_grad_scalar(net, trace, sens * v_grad)
    grads = NetGrads(
        [a + b for a, b in zip(grads.weights, extra.weights)],
        [a + b for a, b in zip(grads.biases, extra.biases)],
    )
    return loss, grads, interleave(v_grad, 2.0 * fx * v_grad)
