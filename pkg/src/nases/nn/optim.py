from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ParamSet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(ps: ParamSet, grads, lr: float) -> ParamSet:
    """Bias-corrected Adam, in place. Rejects the whole step if any gradient is non-finite."""
    ps.check_grads(grads)
    t = ps.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, p in ps.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        slot = ps.state.setdefault(name, {})
        m = slot.get("m", np.zeros_like(p))
        v = slot.get("v", np.zeros_like(p))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        slot["m"], slot["v"] = m, v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    ps.step = t
    return ps


def nesterov_step(ps: ParamSet, grads, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4) -> ParamSet:
    """SGD with Nesterov momentum and L2 weight decay folded into the gradient."""
    ps.check_grads(grads)
    for name, p in ps.params.items():
        d = np.asarray(grads[name], dtype=np.float64) + weight_decay * p
        slot = ps.state.setdefault(name, {})
        vel = momentum * slot.get("velocity", np.zeros_like(p)) + d
        slot["velocity"] = vel
        p -= lr * (d + momentum * vel)
    ps.step += 1
    return ps


@dataclass(frozen=True)
class LrSchedule:
    l_max: float = 0.05
    l_min: float = 0.001
    t0: int = 10

    def __post_init__(self):
        if not (0 < self.l_min < self.l_max):
            raise ValueError("need 0 < l_min < l_max")
        if self.t0 < 1:
            raise ValueError("t0 must be a positive number of epochs")


def cosine_lr(sched: LrSchedule, t: float) -> float:
    """Cosine annealing with warm restarts every ``t0`` epochs; ``t`` may be fractional."""
    if t < 0:
        raise ValueError("t must be >= 0")
    phase = math.fmod(t, sched.t0) / sched.t0
    return sched.l_min + 0.5 * (sched.l_max - sched.l_min) * (1.0 + math.cos(math.pi * phase))


def he_init(shape, fan_in: int, seed) -> np.ndarray:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
