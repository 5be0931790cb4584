from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from ..space import Architecture


class EvaluationFailed(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class EvalBudget:
    epochs_e1: int = 70
    epochs_e2: int = 630
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs_e1 < 1 or self.epochs_e2 < 1:
            raise ValueError("epoch budgets must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Reward:
    value: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"reward {self.value} outside [0, 1]")


class Evaluator(Protocol):
    def evaluate(self, arch: Architecture, budget: EvalBudget) -> Reward: ...
