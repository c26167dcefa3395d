"""Convergence traces: one row per evaluated batch, plus CSV round-tripping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TRACE_HEADER = ("step", "evals", "best_observed", "gp_min_mean", "gp_min_std", "reward")


@dataclass(frozen=True)
class TraceRow:
    step: int
    evals: int
    best_observed: float
    gp_min_mean: float
    gp_min_std: float
    reward: float


@dataclass
class ConvergenceTrace:
    """Per-step record of evaluations spent and best value seen.

    ``method``, ``batch_size``, ``dimension`` and ``seed`` are metadata used
    when traces are grouped for comparison; they are not written to CSV.
    """

    rows: list = field(default_factory=list)
    method: str = ""
    batch_size: int = 0
    dimension: int = 0
    seed: int | None = None

    def __len__(self):
        return len(self.rows)

    def append(self, step, evals, best_observed, gp_min_mean, gp_min_std, reward):
        self.rows.append(
            TraceRow(int(step), int(evals), float(best_observed), float(gp_min_mean), float(gp_min_std), float(reward))
        )

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def evals(self):
        return self.column("evals")

    @property
    def best_observed(self):
        return self.column("best_observed")

    def best_by(self, evals):
        """Best value observed using at most ``evals`` evaluations (nan if none)."""
        value = np.nan
        for r in self.rows:
            if r.evals <= evals:
                value = r.best_observed
        return value


def _fmt(v):
    return format(v, ".17g")


def write_trace(trace, path):
    """Write ``trace`` as CSV with 17 significant digits (lossless for float64)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for r in trace.rows:
                writer.writerow(
                    [r.step, r.evals, _fmt(r.best_observed), _fmt(r.gp_min_mean), _fmt(r.gp_min_std), _fmt(r.reward)]
                )
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path, **meta):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        trace = ConvergenceTrace(**meta)
        for row in reader:
            trace.append(int(row[0]), int(row[1]), *(float(v) for v in row[2:]))
    return trace
