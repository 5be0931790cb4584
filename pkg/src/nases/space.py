"""Discrete macro search space: a chain of layers, each with an operator and skip links.

Architectures are flattened into fixed-width per-layer tokens::

    [5 one-hot operator slots | L-1 skip slots]

so a space with ``L`` layers has origin dimension ``m = L * (5 + L - 1)``.
Skip slot ``s`` of layer ``i`` is meaningful only for ``s < i``; the tail is
padding and always zero in encoded vectors.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field

import numpy as np


class InvalidArchitecture(ValueError):
    pass


class InvalidVector(ValueError):
    pass


class SpaceTooLarge(ValueError):
    pass


class OperatorKind(enum.IntEnum):
    IDENTITY = 0
    SEP_CONV_3X3 = 1
    SEP_CONV_5X5 = 2
    AVG_POOL_3X3 = 3
    MAX_POOL_3X3 = 4

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def from_slug(cls, slug: str) -> "OperatorKind":
        try:
            return cls[slug.upper()]
        except KeyError:
            raise InvalidArchitecture(f"unknown operator {slug!r}") from None


NUM_OPS = len(OperatorKind)


@dataclass(frozen=True)
class SpaceConfig:
    layer_count: int = 15
    skips_enabled: bool = True

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")

    @property
    def token_width(self) -> int:
        return NUM_OPS + self.layer_count - 1

    @property
    def origin_dim(self) -> int:
        return self.layer_count * self.token_width

    @property
    def size(self) -> int:
        n = NUM_OPS**self.layer_count
        if self.skips_enabled:
            n *= 2 ** (self.layer_count * (self.layer_count - 1) // 2)
        return n


@dataclass(frozen=True)
class LayerSpec:
    op: OperatorKind
    skips: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "op", OperatorKind(self.op))
        object.__setattr__(self, "skips", frozenset(int(s) for s in self.skips))


@dataclass(frozen=True)
class Architecture:
    layers: tuple

    def __post_init__(self):
        layers = tuple(
            lay if isinstance(lay, LayerSpec) else LayerSpec(*lay) for lay in self.layers
        )
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidArchitecture("architecture needs at least one layer")
        for i, lay in enumerate(layers):
            bad = [s for s in lay.skips if s < 0 or s >= i]
            if bad:
                raise InvalidArchitecture(f"layer {i} has skips to non-earlier layers {bad}")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def ops(self) -> list[OperatorKind]:
        return [lay.op for lay in self.layers]

    @classmethod
    def from_ops(cls, ops, skips=None) -> "Architecture":
        skips = skips if skips is not None else [()] * len(ops)
        return cls(tuple(LayerSpec(OperatorKind(o), frozenset(s)) for o, s in zip(ops, skips)))

    def to_dict(self) -> dict:
        return {
            "layers": [{"op": lay.op.slug, "skips": sorted(lay.skips)} for lay in self.layers]
        }

    def to_json(self) -> str:
        """Canonical serialization; stable byte-for-byte."""
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        try:
            layers = d["layers"]
            return cls(
                tuple(
                    LayerSpec(OperatorKind.from_slug(lay["op"]), frozenset(lay.get("skips", ())))
                    for lay in layers
                )
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArchitecture(f"malformed architecture: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        return cls.from_dict(json.loads(text))

    def check(self, cfg: SpaceConfig) -> None:
        if len(self.layers) != cfg.layer_count:
            raise InvalidArchitecture(
                f"architecture has {len(self.layers)} layers, space expects {cfg.layer_count}"
            )
        if not cfg.skips_enabled and any(lay.skips for lay in self.layers):
            raise InvalidArchitecture("skip connections present but disabled in this space")


def encode_origin(arch: Architecture, cfg: SpaceConfig) -> np.ndarray:
    """Flatten an architecture into its origin vector of length ``cfg.origin_dim``."""
    arch.check(cfg)
    tokens = np.zeros((cfg.layer_count, cfg.token_width))
    for i, lay in enumerate(arch.layers):
        tokens[i, int(lay.op)] = 1.0
        for s in lay.skips:
            tokens[i, NUM_OPS + s] = 1.0
    return tokens.reshape(-1)


def discretize(v, cfg: SpaceConfig) -> Architecture:
    """Snap a continuous origin vector to the nearest valid architecture.

    Operators are the argmax of the op slots (first index wins ties); skip
    ``s`` of layer ``i`` is kept iff its slot exceeds 0.5 and ``s < i``.
    """
    v = np.asarray(v, dtype=float)
    if v.size != cfg.origin_dim:
        raise InvalidVector(f"expected vector of size {cfg.origin_dim}, got {v.size}")
    tokens = v.reshape(cfg.layer_count, cfg.token_width)
    layers = []
    for i, tok in enumerate(tokens):
        op = OperatorKind(int(np.argmax(tok[:NUM_OPS])))
        skips = frozenset()
        if cfg.skips_enabled:
            skips = frozenset(s for s in range(i) if tok[NUM_OPS + s] > 0.5)
        layers.append(LayerSpec(op, skips))
    return Architecture(tuple(layers))


def enumerate_space(cfg: SpaceConfig, cap: int = 10**6) -> list[Architecture]:
    if cfg.size > cap:
        raise SpaceTooLarge(f"space has {cfg.size} architectures, cap is {cap}")
    L = cfg.layer_count
    skip_choices = []
    for i in range(L):
        if cfg.skips_enabled:
            subsets = [
                frozenset(c) for k in range(i + 1) for c in itertools.combinations(range(i), k)
            ]
        else:
            subsets = [frozenset()]
        skip_choices.append(subsets)
    out = []
    for ops in itertools.product(OperatorKind, repeat=L):
        for skips in itertools.product(*skip_choices):
            out.append(Architecture(tuple(LayerSpec(o, s) for o, s in zip(ops, skips))))
    return out


def random_architecture(cfg: SpaceConfig, seed: int) -> Architecture:
    rng = np.random.default_rng(seed)
    L = cfg.layer_count
    ops = rng.integers(0, NUM_OPS, size=L)
    layers = []
    for i in range(L):
        skips = frozenset()
        if cfg.skips_enabled and i > 0:
            bits = rng.random(i) < 0.5
            skips = frozenset(int(s) for s in np.flatnonzero(bits))
        layers.append(LayerSpec(OperatorKind(int(ops[i])), skips))
    return Architecture(tuple(layers))
