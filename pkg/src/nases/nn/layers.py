"""Dense and LSTM layers, activations and losses with hand-written backward passes.

Every forward returns ``(out, cache)``; the matching backward takes the
upstream gradient and the cache. Weight matrices are stored ``(out, in)``.
"""
from __future__ import annotations

import numpy as np

from .params import ShapeError


def _check_width(x, width, what):
    if x.shape[-1] != width:
        raise ShapeError(f"{what}: expected last extent {width}, got {x.shape[-1]}")


# -- dense --------------------------------------------------------------------


def dense(W, b, x):
    """y = x @ W.T + b for a batch ``x`` of shape (..., in)."""
    x = np.asarray(x, dtype=np.float64)
    _check_width(x, W.shape[1], "dense")
    return x @ W.T + b, x


def dense_backward(dy, W, x):
    """Returns (dW, db, dx)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy2.T @ x2, dy2.sum(axis=0), dy @ W


# -- activations --------------------------------------------------------------


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


# -- losses -------------------------------------------------------------------


def mse(pred, target):
    """Mean squared error over every element. Returns (loss, dloss/dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy expects (N, K) logits and (N,) labels")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# -- LSTM ---------------------------------------------------------------------


def lstm_params_shapes(input_width: int, hidden: int, prefix: str = "") -> dict:
    return {
        f"{prefix}Wx": (4 * hidden, input_width),
        f"{prefix}Wh": (4 * hidden, hidden),
        f"{prefix}b": (4 * hidden,),
    }


def lstm_step(Wx, Wh, b, x, h, c):
    """One LSTM cell step; gate order is input, forget, output, candidate.

    Returns ``(h_next, c_next, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    H = Wh.shape[1]
    _check_width(x, Wx.shape[1], "lstm input")
    _check_width(h, H, "lstm hidden state")
    _check_width(c, H, "lstm cell state")
    z = x @ Wx.T + h @ Wh.T + b
    gates = sigmoid(z[..., : 3 * H])
    i = gates[..., :H]
    f = gates[..., H : 2 * H]
    o = gates[..., 2 * H :]
    g = np.tanh(z[..., 3 * H :])
    c_next = f * c + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, (x, h, c, i, f, o, g, tc)


def lstm_step_backward(dh_next, dc_next, Wx, Wh, cache):
    """Returns (dWx, dWh, db, dx, dh, dc)."""
    x, h, c, i, f, o, g, tc = cache
    do = dh_next * tc
    dc_total = dc_next + dh_next * o * (1.0 - tc * tc)
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * c
    dc = dc_total * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=-1
    )
    dz2 = dz.reshape(-1, dz.shape[-1])
    dWx = dz2.T @ x.reshape(-1, x.shape[-1])
    dWh = dz2.T @ h.reshape(-1, h.shape[-1])
    db = dz2.sum(axis=0)
    return dWx, dWh, db, dz @ Wx, dz @ Wh, dc
