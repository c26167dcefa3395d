"""Batch Bayesian optimisation baseline: expected improvement + constant liar."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import gp
from .bench import DOMAIN, DatasetObjective
from .env import compute_reward
from .errors import ContractViolation
from .trace import ConvergenceTrace

SIGMA_FLOOR = 1e-12


@dataclass
class BaselineConfig:
    batch_size: int = 5
    num_batches: int = 30
    initial_points: int = 3
    grid_points: int = 64
    random_candidates: int = 4096
    liar: str = "best"
    alpha_explore: float = 1.0
    fit: gp.FitConfig = field(default_factory=gp.FitConfig)
    warm_start: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.num_batches < 1:
            raise ContractViolation("batch_size and num_batches must be >= 1")
        if self.initial_points < 1:
            raise ContractViolation("initial_points must be >= 1")
        if self.liar not in ("best", "mean"):
            raise ContractViolation(f"liar must be 'best' or 'mean', got {self.liar!r}")

    @property
    def budget(self):
        return self.initial_points + self.batch_size * self.num_batches


def ei_from_moments(mean, std, best):
    """Expected improvement below ``best`` for Gaussian predictions (vectorised)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.zeros(np.broadcast(mean, std).shape)
    ok = np.broadcast_to(std > SIGMA_FLOOR, out.shape)
    mu = np.broadcast_to(mean, out.shape)[ok]
    sd = np.broadcast_to(std, out.shape)[ok]
    z = (best - mu) / sd
    out[ok] = (best - mu) * norm.cdf(z) + sd * norm.pdf(z)
    return np.maximum(out, 0.0)


def expected_improvement(model, x, best):
    """EI of minimisation at one point; zero where the posterior std vanishes."""
    mean, std = gp.posterior_predict(model, x)
    return float(ei_from_moments(mean, std, best))


def propose_batch_constant_liar(model, n, candidates, liar="best"):
    """Greedy EI batch with fabricated observations at each pick.

    After each selection the point is added to the model with output equal
    to the incumbent best (``liar="best"``) or the posterior mean there
    (``liar="mean"``); hyperparameters stay fixed within the batch.

    Returns
    -------
    batch : ndarray, shape (n, d)
    indices : ndarray of int
        Rows of ``candidates`` that were chosen.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] < n:
        raise ContractViolation(f"{candidates.shape[0]} candidates for a batch of {n}")
    if len(model.data) == 0:
        raise ContractViolation("constant liar needs a model fitted to data")
    best = float(model.data.outputs.min())
    current = model
    chosen = []
    taken = np.zeros(candidates.shape[0], dtype=bool)
    for _ in range(n):
        mean, std = current.predict(candidates)
        ei = ei_from_moments(mean, std, best)
        ei[taken] = -np.inf
        i = int(np.argmax(ei))
        taken[i] = True
        chosen.append(i)
        fake = best if liar == "best" else float(mean[i])
        current = current.condition(candidates[i : i + 1], [fake])
    idx = np.array(chosen, dtype=int)
    return candidates[idx].copy(), idx


def run_batch_bo(objective, cfg, rng):
    """Batch BO under the same trace schema as policy deployment.

    Starts from ``cfg.initial_points`` uniform random points, then runs
    ``cfg.num_batches`` rounds of propose, evaluate, refit.
    """
    objective.reset()
    d = objective.dimension
    dataset_mode = isinstance(objective, DatasetObjective)
    grid = None if dataset_mode else gp.candidate_grid(d, cfg.grid_points, cfg.random_candidates)

    initial = rng.uniform(DOMAIN[0], DOMAIN[1], size=(cfg.initial_points, d))
    points, outputs = objective.query(initial)
    data = gp.Dataset(points, outputs)
    model = gp.fit_model(data, cfg.fit)

    def stats_for(m):
        cand = objective.grid.points if dataset_mode else np.vstack([grid, m.data.inputs])
        return gp.min_statistics(m, cand)

    stats = stats_for(model)
    trace = ConvergenceTrace(method="batch_bo", batch_size=cfg.batch_size, dimension=d)
    trace.append(0, objective.evaluations, outputs.min(), stats.min_mean, stats.min_std, 0.0)
    for step in range(1, cfg.num_batches + 1):
        candidates = objective.candidates()[0] if dataset_mode else grid
        batch, _ = propose_batch_constant_liar(model, cfg.batch_size, candidates, cfg.liar)
        points, outputs = objective.query(batch)
        data = data.extend(points, outputs)
        model = gp.fit_model(data, cfg.fit, warm_start=model.hyperparams if cfg.warm_start else None)
        prev, stats = stats, stats_for(model)
        trace.append(
            step,
            objective.evaluations,
            data.outputs.min(),
            stats.min_mean,
            stats.min_std,
            compute_reward(prev, stats, cfg.alpha_explore),
        )
    return trace
