from .base import EvalBudget, EvaluationFailed, Evaluator, Reward
from .synthetic import SyntheticOracle
