"""Closed-form reward landscape with a known optimum, for desk-scale search checks."""
from __future__ import annotations

import numpy as np

from ..space import Architecture, SpaceConfig, random_architecture
from .base import EvalBudget, Reward


class SyntheticOracle:
    """Reward = total weight of the decisions (operators, skip bits) that match ``target``.

    Decisions are ordered as the L operator choices followed, when skips are
    enabled, by every feasible skip bit ``(i, s)`` with ``s < i`` in row order.
    """

    def __init__(self, target: Architecture, space: SpaceConfig, weights=None):
        target.check(space)
        self.target = target
        self.space = space
        n = self.num_decisions(space)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError(f"expected {n} decision weights, got shape {w.shape}")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("weights must be nonnegative and sum to 1")
        self.weights = w
        self._target_bits = self.decisions(target)

    @staticmethod
    def num_decisions(space: SpaceConfig) -> int:
        L = space.layer_count
        return L + (L * (L - 1) // 2 if space.skips_enabled else 0)

    def decisions(self, arch: Architecture) -> np.ndarray:
        vals = [int(op) for op in arch.ops]
        if self.space.skips_enabled:
            vals += [int(s in lay.skips) for i, lay in enumerate(arch.layers) for s in range(i)]
        return np.array(vals)

    def score(self, arch: Architecture) -> float:
        arch.check(self.space)
        match = self.decisions(arch) == self._target_bits
        # clip guards float round-off on the all-match sum
        return float(min(1.0, self.weights[match].sum()))

    def evaluate(self, arch: Architecture, budget: EvalBudget | None = None) -> Reward:
        return Reward(self.score(arch), {"evaluator": "synthetic"})

    @classmethod
    def seeded(cls, space: SpaceConfig, seed: int, weights=None) -> "SyntheticOracle":
        return cls(random_architecture(space, seed), space, weights)
