"""REINFORCE controller over architecture embeddings.

The controller has the simulator's exact shape and starts from a deep copy
of its pretrained weights. Its policy is an isotropic Gaussian centred on
the encoder output for the current architecture.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderModel, encoder_backward, encoder_forward
from .nn import NumericError, ParamSet, ShapeError, adam_step, check_finite
from .nn.params import atomic_write
from .space import NUM_OPS, SpaceConfig, encode_origin, random_architecture


class NotPretrainedError(RuntimeError):
    pass


class StaleSampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicySample:
    origin: np.ndarray  # the input the mean was computed from
    mean: np.ndarray
    action: np.ndarray
    log_prob: float
    seed: int
    version: int  # controller update count when sampled

    def to_dict(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "mean": self.mean.tolist(),
            "action": self.action.tolist(),
            "log_prob": self.log_prob,
            "seed": self.seed,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySample":
        return cls(
            np.asarray(d["origin"], dtype=np.float64),
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["action"], dtype=np.float64),
            float(d["log_prob"]),
            int(d["seed"]),
            int(d["version"]),
        )


def gaussian_log_prob(action, mean, sigma) -> float:
    d = np.asarray(action) - np.asarray(mean)
    n = d.size
    return float(-0.5 * np.sum(d * d) / sigma**2 - 0.5 * n * math.log(2 * math.pi * sigma**2))


class ControllerModel:
    def __init__(self, params: ParamSet, space: SpaceConfig, sigma=0.1, baseline_decay=0.95):
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        if not 0 < baseline_decay < 1:
            raise ValueError("baseline_decay must lie in (0, 1)")
        self.params = params
        self.space = space
        self.sigma = float(sigma)
        self.baseline_decay = float(baseline_decay)
        self.baseline: float | None = None
        self.version = 0

    @property
    def embed_dim(self) -> int:
        return self.params["Wp"].shape[0]

    def _tokens(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.size != self.space.origin_dim:
            raise ShapeError(f"expected origin vector of size {self.space.origin_dim}, got {a.size}")
        return a.reshape(1, self.space.layer_count, self.space.token_width)

    def save(self, directory) -> None:
        d = Path(directory)
        self.params.save(d / "controller.bin")
        sidecar = {
            "sigma": self.sigma,
            "baseline": self.baseline,
            "decay": self.baseline_decay,
            "version": self.version,
            "layer_count": self.space.layer_count,
            "skips_enabled": self.space.skips_enabled,
        }
        atomic_write(d / "controller.json", json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "ControllerModel":
        d = Path(directory)
        meta = json.loads((d / "controller.json").read_text())
        c = cls(
            ParamSet.load(d / "controller.bin"),
            SpaceConfig(meta["layer_count"], meta["skips_enabled"]),
            meta["sigma"],
            meta["decay"],
        )
        c.baseline = meta["baseline"]
        c.version = meta["version"]
        return c


def init_from_simulator(ae: AutoencoderModel, sigma=0.1, baseline_decay=0.95) -> ControllerModel:
    if ae is None or not ae.meta.get("epochs"):
        raise NotPretrainedError("controller needs a pretrained autoencoder checkpoint")
    params = ParamSet({k: v.copy() for k, v in ae.encoder.items()})
    return ControllerModel(params, ae.space, sigma, baseline_decay)


def policy_mean(c: ControllerModel, a) -> np.ndarray:
    return encoder_forward(c.params, c._tokens(a))[0][0]


def sample_action(c: ControllerModel, a, seed: int) -> PolicySample:
    origin = np.asarray(a, dtype=np.float64).reshape(-1)
    mean = policy_mean(c, origin)
    noise = np.random.default_rng(seed).standard_normal(mean.shape)
    action = mean + c.sigma * noise
    return PolicySample(origin, mean, action, gaussian_log_prob(action, mean, c.sigma), seed, c.version)


def log_prob(c: ControllerModel, a, action) -> float:
    return gaussian_log_prob(action, policy_mean(c, a), c.sigma)


def log_prob_grad(c: ControllerModel, a, action):
    """Gradient of log pi(action | a) w.r.t. every controller parameter."""
    mean, cache = encoder_forward(c.params, c._tokens(a))
    dmean = (np.asarray(action).reshape(1, -1) - mean) / c.sigma**2
    return encoder_backward(c.params, dmean, cache)


def update_baseline(c: ControllerModel, reward: float) -> float:
    """EMA of rewards; the first reward seeds it directly."""
    if not math.isfinite(reward):
        raise NumericError("reward must be finite")
    if c.baseline is None:
        c.baseline = float(reward)
    else:
        c.baseline = c.baseline_decay * c.baseline + (1.0 - c.baseline_decay) * float(reward)
    return c.baseline


def read_baseline(c: ControllerModel) -> float | None:
    return c.baseline


def reinforce_update(c: ControllerModel, sample: PolicySample, reward: float, lr: float = 1e-5) -> dict:
    """One policy-gradient ascent step on (reward - baseline) * grad log pi.

    The baseline used is the one before this reward is folded in.
    """
    if not math.isfinite(reward):
        raise NumericError("reward must be finite")
    if sample.version != c.version:
        raise StaleSampleError(
            f"sample drawn at controller version {sample.version}, controller is at {c.version}"
        )
    baseline = float(reward) if c.baseline is None else c.baseline
    advantage = float(reward) - baseline
    glp = log_prob_grad(c, sample.origin, sample.action)
    grads = {k: -advantage * g for k, g in glp.items()}
    for g in grads.values():
        check_finite(g, "controller gradient")
    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    adam_step(c.params, grads, lr)
    c.version += 1
    update_baseline(c, reward)
    return {"advantage": advantage, "baseline": c.baseline, "grad_norm": grad_norm}


# -- controller-only bandit surrogate -----------------------------------------


def run_bandit(
    c: ControllerModel,
    target_op: int,
    steps: int = 2000,
    lr: float = 1e-3,
    seed: int = 0,
    window: int = 200,
) -> dict:
    """Stateless surrogate: fixed input, fixed random linear decode, reward 1 iff layer 0 picks ``target_op``.

    Returns the target frequency over the last ``window`` steps and the full hit trace.
    """
    space = c.space
    rng = np.random.default_rng(seed)
    decode_map = rng.normal(size=(NUM_OPS, c.embed_dim)) / math.sqrt(c.embed_dim)
    state = encode_origin(random_architecture(space, seed), space)
    hits = []
    for t in range(steps):
        s = sample_action(c, state, seed=int(rng.integers(2**63 - 1)))
        op = int(np.argmax(decode_map @ s.action))
        reward = 1.0 if op == target_op else 0.0
        reinforce_update(c, s, reward, lr)
        hits.append(reward)
    tail = hits[-window:]
    return {"frequency": float(np.mean(tail)), "hits": hits}
