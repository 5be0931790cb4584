"""Spatial kernels on NCHW tensors: separable convolution, pooling, batchnorm.

All spatial operators use "same" padding (``k // 2``), so the output extent
is ``ceil(H / stride)``. Loops run over kernel offsets only; the batch,
channel and spatial axes are vectorized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..space import OperatorKind
from .params import ShapeError


class ConfigError(ValueError):
    pass


class MissingStatsError(RuntimeError):
    pass


def _check_nchw(x):
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW tensor, got shape {x.shape}")


def _check_stride(stride):
    if stride not in (1, 2):
        raise ConfigError(f"unsupported stride {stride}; only 1 and 2 are allowed")


def _out_extent(n, stride):
    return (n - 1) // stride + 1


def _windows(H, W, k, stride):
    """Yield (dy, dx, row slice, col slice) into the padded input for each kernel offset."""
    Ho, Wo = _out_extent(H, stride), _out_extent(W, stride)
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, slice(dy, dy + stride * (Ho - 1) + 1, stride), slice(
                dx, dx + stride * (Wo - 1) + 1, stride
            )


def _pad(x, p, value=0.0):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


# -- depthwise / pointwise ----------------------------------------------------


def depthwise_conv(x, w, stride=1):
    """Per-channel k x k convolution; ``w`` has shape (C, k, k)."""
    _check_nchw(x)
    _check_stride(stride)
    N, C, H, W = x.shape
    if w.shape[0] != C or w.shape[1] != w.shape[2]:
        raise ShapeError(f"depthwise weights {w.shape} do not fit {C} channels")
    k = w.shape[1]
    xp = _pad(x, k // 2)
    out = np.zeros((N, C, _out_extent(H, stride), _out_extent(W, stride)))
    for dy, dx, rs, cs in _windows(H, W, k, stride):
        out += w[None, :, dy, dx, None, None] * xp[:, :, rs, cs]
    return out, (xp, w, stride, x.shape)


def depthwise_conv_backward(dout, cache):
    xp, w, stride, xshape = cache
    k = w.shape[1]
    p = k // 2
    H, W = xshape[2:]
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for dy, dx, rs, cs in _windows(H, W, k, stride):
        dw[:, dy, dx] = np.einsum("nchw,nchw->c", dout, xp[:, :, rs, cs])
        dxp[:, :, rs, cs] += w[None, :, dy, dx, None, None] * dout
    return dw, dxp[:, :, p : p + H, p : p + W]


def pointwise_conv(x, w, stride=1):
    """1 x 1 convolution, ``w`` of shape (C_out, C_in); stride subsamples first."""
    _check_nchw(x)
    _check_stride(stride)
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise weights {w.shape} do not fit {x.shape[1]} channels")
    xs = x[:, :, ::stride, ::stride]
    out = np.einsum("oc,nchw->nohw", w, xs, optimize=True)
    return out, (xs, w, stride, x.shape)


def pointwise_conv_backward(dout, cache):
    xs, w, stride, xshape = cache
    dw = np.einsum("nohw,nchw->oc", dout, xs, optimize=True)
    dxs = np.einsum("oc,nohw->nchw", w, dout, optimize=True)
    if stride == 1:
        return dw, dxs
    dx = np.zeros(xshape)
    dx[:, :, ::stride, ::stride] = dxs
    return dw, dx


# -- pooling ------------------------------------------------------------------


def avg_pool(x, stride=1, k=3):
    """Average over the in-bounds part of each window (padding is not counted)."""
    _check_nchw(x)
    _check_stride(stride)
    N, C, H, W = x.shape
    xp = _pad(x, k // 2)
    ones = _pad(np.ones((1, 1, H, W)), k // 2)
    total = np.zeros((N, C, _out_extent(H, stride), _out_extent(W, stride)))
    count = np.zeros((1, 1) + total.shape[2:])
    for _, _, rs, cs in _windows(H, W, k, stride):
        total += xp[:, :, rs, cs]
        count += ones[:, :, rs, cs]
    return total / count, (count, stride, k, x.shape)


def avg_pool_backward(dout, cache):
    count, stride, k, xshape = cache
    p = k // 2
    H, W = xshape[2:]
    dxp = np.zeros(xshape[:2] + (H + 2 * p, W + 2 * p))
    g = dout / count
    for _, _, rs, cs in _windows(H, W, k, stride):
        dxp[:, :, rs, cs] += g
    return dxp[:, :, p : p + H, p : p + W]


def max_pool(x, stride=1, k=3):
    _check_nchw(x)
    _check_stride(stride)
    H, W = x.shape[2:]
    xp = _pad(x, k // 2, value=-np.inf)
    stack = np.stack([xp[:, :, rs, cs] for _, _, rs, cs in _windows(H, W, k, stride)])
    arg = stack.argmax(axis=0)
    out = np.take_along_axis(stack, arg[None], axis=0)[0]
    return out, (arg, stride, k, x.shape)


def max_pool_backward(dout, cache):
    arg, stride, k, xshape = cache
    p = k // 2
    H, W = xshape[2:]
    dxp = np.zeros(xshape[:2] + (H + 2 * p, W + 2 * p))
    for j, (_, _, rs, cs) in enumerate(_windows(H, W, k, stride)):
        dxp[:, :, rs, cs] += np.where(arg == j, dout, 0.0)
    return dxp[:, :, p : p + H, p : p + W]


# -- batchnorm ----------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class BNStats:
    """Running statistics; ``None`` until the first training-mode call."""

    mean: np.ndarray | None = None
    var: np.ndarray | None = None


def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeError(f"batchnorm expects (N, C) or (N, C, H, W), got {x.shape}")


def batchnorm(x, gamma, beta, stats: BNStats, training: bool):
    axes, bshape = _bn_axes(x)
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if stats.mean is None:
            stats.mean, stats.var = mu.copy(), var.copy()
        else:
            stats.mean = BN_MOMENTUM * stats.mean + (1 - BN_MOMENTUM) * mu
            stats.var = BN_MOMENTUM * stats.var + (1 - BN_MOMENTUM) * var
    else:
        if stats.mean is None:
            raise MissingStatsError("batchnorm inference before any training step")
        mu, var = stats.mean, stats.var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv, gamma, axes, bshape, training)


def batchnorm_backward(dout, cache):
    """Returns (dgamma, dbeta, dx)."""
    xhat, inv, gamma, axes, bshape, training = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if not training:
        return dgamma, dbeta, dxhat * inv.reshape(bshape)
    m = dout.size / dout.shape[1]
    dx = (
        inv.reshape(bshape)
        / m
        * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(bshape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
        )
    )
    return dgamma, dbeta, dx


# -- global average pooling ---------------------------------------------------


def global_avg_pool(x):
    _check_nchw(x)
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, xshape):
    H, W = xshape[2:]
    return np.broadcast_to(dout[:, :, None, None] / (H * W), xshape).copy()


# -- operator dispatch --------------------------------------------------------

SEP_KERNEL = {OperatorKind.SEP_CONV_3X3: 3, OperatorKind.SEP_CONV_5X5: 5}


def conv_ops(params, x, kind: OperatorKind, stride=1, prefix=""):
    """Apply one of the five search-space operators.

    Separable convolutions read ``{prefix}dw`` (C, k, k) and ``{prefix}pw``
    (C_out, C); the other operators have no parameters.
    Returns ``(out, cache)``.
    """
    _check_nchw(x)
    _check_stride(stride)
    kind = OperatorKind(kind)
    if kind is OperatorKind.IDENTITY:
        return (x if stride == 1 else x[:, :, ::stride, ::stride]), (kind, stride, x.shape)
    if kind is OperatorKind.AVG_POOL_3X3:
        out, c = avg_pool(x, stride)
        return out, (kind, c)
    if kind is OperatorKind.MAX_POOL_3X3:
        out, c = max_pool(x, stride)
        return out, (kind, c)
    dw = params[prefix + "dw"]
    if dw.shape[1] != SEP_KERNEL[kind]:
        raise ShapeError(f"{kind.name} needs a {SEP_KERNEL[kind]}x{SEP_KERNEL[kind]} kernel")
    h, c1 = depthwise_conv(x, dw, stride)
    out, c2 = pointwise_conv(h, params[prefix + "pw"])
    return out, (kind, c1, c2)


def conv_ops_backward(dout, cache, prefix=""):
    """Returns (param grads dict, dx)."""
    kind = cache[0]
    if kind is OperatorKind.IDENTITY:
        _, stride, xshape = cache
        if stride == 1:
            return {}, dout
        dx = np.zeros(xshape)
        dx[:, :, ::stride, ::stride] = dout
        return {}, dx
    if kind is OperatorKind.AVG_POOL_3X3:
        return {}, avg_pool_backward(dout, cache[1])
    if kind is OperatorKind.MAX_POOL_3X3:
        return {}, max_pool_backward(dout, cache[1])
    _, c1, c2 = cache
    dpw, dh = pointwise_conv_backward(dout, c2)
    ddw, dx = depthwise_conv_backward(dh, c1)
    return {prefix + "dw": ddw, prefix + "pw": dpw}, dx
