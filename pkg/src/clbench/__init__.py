"""Continual-learning benchmark engine: the three incremental-learning
scenarios (task / domain / class) on the split and permuted MNIST protocols,
with gating, weight-importance regularization, replay, generative replay and
exemplar-based methods."""

from .training import ExperimentConfig, RunReport, run_experiment
from .reporting import aggregate, run_seeds

__all__ = ["ExperimentConfig", "RunReport", "run_experiment", "aggregate", "run_seeds"]
__version__ = "0.1.0"
