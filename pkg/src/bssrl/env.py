"""The batch sequential-design environment.

State is the last evaluated batch plus the GP-minimum statistics; an action
is a batch of ``n`` normalized points.  Each step evaluates the batch,
refits the GP and pays a reward measuring how far the posterior minimum
mean (and, weighted by ``alpha_explore``, its uncertainty) moved down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp
from .bench import DOMAIN, DatasetObjective
from .errors import ContractViolation
from .trace import ConvergenceTrace


@dataclass
class EnvConfig:
    """Batch size ``n``, number of batches ``m`` and reward settings.

    The reset batch is evaluated on top of the ``m`` steps, so a full
    episode spends ``(m + 1) * n`` evaluations.  With ``refit=False`` the
    hyperparameters fitted at reset are kept for the whole episode.
    """

    batch_size: int = 5
    num_batches: int = 30
    alpha_explore: float = 1.0
    discount: float = 1.0
    grid_points: int = 64
    random_candidates: int = 4096
    fit: gp.FitConfig = field(default_factory=gp.FitConfig)
    warm_start: bool = True
    refit: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.num_batches < 1:
            raise ContractViolation("num_batches must be >= 1")
        if self.alpha_explore < 0:
            raise ContractViolation("alpha_explore must be >= 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ContractViolation("discount must lie in [0, 1]")

    @property
    def total_samples(self):
        """``S = m n``: points proposed by the policy, excluding the reset batch."""
        return self.batch_size * self.num_batches

    @property
    def budget(self):
        return self.batch_size * (self.num_batches + 1)


@dataclass
class EnvState:
    last_batch: np.ndarray
    min_mean: float
    min_std: float
    step_index: int = 0


@dataclass
class EpisodeRecord:
    states: list
    actions: list
    rewards: np.ndarray
    trace: ConvergenceTrace


def compute_reward(prev, curr, alpha):
    """``-(dmean + alpha * dstd)`` between consecutive GP-minimum statistics."""
    return -((curr.min_mean - prev.min_mean) + alpha * (curr.min_std - prev.min_std))


def _partial_sums(rewards, gamma):
    rewards = np.asarray(rewards, dtype=float)
    weights = gamma ** np.arange(1, rewards.size + 1)
    return np.concatenate([[0.0], np.cumsum(weights * rewards)])


def cumulative_reward(rewards, gamma):
    """Discounted return with the first reward weighted by ``gamma ** 1``."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation(f"discount {gamma} outside [0, 1]")
    return float(_partial_sums(rewards, gamma)[-1])


def reward_to_go(rewards, j, gamma):
    """``R[m] - R[j]`` where ``R[k]`` is the discounted sum of the first ``k`` rewards."""
    R = _partial_sums(rewards, gamma)
    m = R.size - 1
    if not 0 <= j <= m:
        raise ContractViolation(f"step index {j} outside [0, {m}]")
    return float(R[m] - R[j])


class SequentialDesignEnv:
    """Holds the growing dataset and GP for one episode on one objective."""

    def __init__(self, objective, cfg):
        self.objective = objective
        self.cfg = cfg
        self.dimension = objective.dimension
        if isinstance(objective, DatasetObjective):
            self._base_candidates = objective.grid.points
            self._add_training_inputs = False
        else:
            self._base_candidates = gp.candidate_grid(self.dimension, cfg.grid_points, cfg.random_candidates)
            self._add_training_inputs = True
        self.data = None
        self.model = None
        self.state = None
        self.stats = None
        self.states = []
        self.actions = []
        self.rewards = []
        self.trace = None

    def candidates(self):
        if self._add_training_inputs:
            return np.vstack([self._base_candidates, self.data.inputs])
        return self._base_candidates

    def _refit(self):
        if self.model is not None and not self.cfg.refit:
            # hyperparameters stay at their reset-time values
            self.model = gp.GPModel(self.data, self.model.hyperparams)
        else:
            warm = self.model.hyperparams if (self.cfg.warm_start and self.model is not None) else None
            self.model = gp.fit_model(self.data, self.cfg.fit, warm_start=warm)
        self.stats = gp.min_statistics(self.model, self.candidates())

    @property
    def done(self):
        return self.state is not None and self.state.step_index >= self.cfg.num_batches

    def reset(self, rng):
        """Evaluate a uniformly random initial batch and fit the first GP."""
        self.objective.reset()
        n, d = self.cfg.batch_size, self.dimension
        initial = rng.uniform(DOMAIN[0], DOMAIN[1], size=(n, d))
        points, outputs = self.objective.query(initial)
        self.data = gp.Dataset(points, outputs)
        self.model = None
        self._refit()
        self.state = EnvState(points, self.stats.min_mean, self.stats.min_std, 0)
        self.states = [self.state]
        self.actions = []
        self.rewards = []
        self.trace = ConvergenceTrace(batch_size=n, dimension=d)
        self.trace.append(0, self.objective.evaluations, outputs.min(), self.stats.min_mean, self.stats.min_std, 0.0)
        return self.state

    def step(self, batch):
        """Evaluate ``batch`` (shape ``(n, d)``), refit, and return ``(state, reward)``."""
        if self.state is None:
            raise ContractViolation("step called before reset")
        if self.done:
            raise ContractViolation(f"budget of {self.cfg.num_batches} batches exhausted")
        batch = np.asarray(batch, dtype=float)
        if batch.shape != (self.cfg.batch_size, self.dimension):
            raise ContractViolation(f"batch must have shape ({self.cfg.batch_size}, {self.dimension})")
        prev = self.stats
        points, outputs = self.objective.query(batch)
        self.data = self.data.extend(points, outputs)
        self._refit()
        reward = compute_reward(prev, self.stats, self.cfg.alpha_explore)
        self.state = EnvState(points, self.stats.min_mean, self.stats.min_std, self.state.step_index + 1)
        self.states.append(self.state)
        self.actions.append(points)
        self.rewards.append(reward)
        self.trace.append(
            self.state.step_index,
            self.objective.evaluations,
            self.data.outputs.min(),
            self.stats.min_mean,
            self.stats.min_std,
            reward,
        )
        return self.state, reward

    def record(self):
        return EpisodeRecord(list(self.states), list(self.actions), np.array(self.rewards), self.trace)
