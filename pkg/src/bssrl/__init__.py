"""Batch sequential sampling driven by a learned Gaussian policy.

Modules
-------
gp        Gaussian-process regression with an ARD squared-exponential kernel.
env       Sequential-design environment, rewards and returns.
policy    Policy network, sample-averaged actions and REINFORCE updates.
trainer   Training over a function class and frozen deployment.
baseline  Batch Bayesian optimisation (expected improvement, constant liar).
bench     Benchmarks, normalization, dataset and subprocess objectives.
cli       Config parsing, experiment runs and summaries.
"""

from .errors import ConfigError, ContractViolation, DatasetParseError, EvaluationError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DatasetParseError",
    "EvaluationError",
    "NumericalError",
]
