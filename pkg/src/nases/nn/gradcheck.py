from __future__ import annotations

import math

import numpy as np

from .params import NumericError, ParamSet


def finite_diff_grad(f, params, eps: float = 1e-4):
    """Central-difference gradient of scalar ``f`` w.r.t. every entry of ``params``.

    ``params`` may be a ParamSet, a dict of arrays, or a single array; arrays
    are perturbed in place and restored. The result mirrors the input layout.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(params, np.ndarray):
        return _fd_array(lambda: f(params), params, eps)
    arrays = params.params if isinstance(params, ParamSet) else params
    return {k: _fd_array(lambda: f(params), arr, eps) for k, arr in arrays.items()}


def _fd_array(call, arr, eps):
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(call())
        flat[i] = orig - eps
        down = float(call())
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError(f"non-finite function value at index {i}")
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_rel_error(analytic, numeric) -> float:
    """Elementwise |a - n| / max(1, |a|), maximized."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))
