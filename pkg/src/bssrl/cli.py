"""Experiment orchestration: config parsing, runs, summaries and the CLI.

Configs are flat YAML mappings.  Every key has a default (see
``DEFAULTS``); unknown or duplicated keys are rejected with their line
number.  A run writes, into its output directory:

* ``resolved_config.json`` - every key with the value actually used;
* one trace CSV per (method, batch size, seed);
* policy checkpoints and training logs for runs that train;
* ``summary.json`` - medians/IQRs per evaluation checkpoint, and
  ``"status": "incomplete"`` if the run failed part-way.

Exit codes: 0 success, 1 experiment error, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bench, gp
from .baseline import BaselineConfig, run_batch_bo
from .env import EnvConfig
from .errors import ConfigError
from .policy import load_checkpoint, save_checkpoint
from .trace import write_trace
from .trainer import (
    FunctionClassSpec,
    PolicyConfig,
    TrainConfig,
    deploy_adaptive,
    deploy_policy,
    train_policy,
    write_training_log,
)

OUTPUT_ENV_VAR = "BSSRL_OUTPUT_DIR"
TASKS = ("train", "deploy", "baseline", "compare")

DEFAULTS = {
    "task": None,
    # objective source: exactly one of these for deploy/baseline/compare
    "test_function": None,
    "dataset": None,
    "command": None,
    "command_dimension": None,
    "command_bounds": None,
    "maximize": False,
    # training function class
    "train_function": "ackley",
    "shift_low": -1.0,
    "shift_high": 1.0,
    "num_training_functions": 1,
    "episodes": 200,
    # budget
    "batch_size": 5,
    "num_batches": 30,
    "budget": None,
    "initial_points": 3,
    # reward
    "alpha_explore": 1.0,
    "discount": 1.0,
    # policy
    "samples_per_action": 10,
    "policy_lr": 0.05,
    "variance_update": "literal",
    "variance_cap": 9.0,
    "fit_epochs": 50,
    "fit_lr": 1e-3,
    # GP fitting
    "restarts": 5,
    "train_restarts": 1,
    # baseline
    "liar": "best",
    # bookkeeping
    "seeds": [0],
    "train_seed": 0,
    "checkpoint": None,
    "adaptive_deploy": False,
    "output_dir": None,
    "threshold": None,
}

_INT_KEYS = {
    "command_dimension",
    "num_training_functions",
    "episodes",
    "num_batches",
    "budget",
    "initial_points",
    "samples_per_action",
    "fit_epochs",
    "restarts",
    "train_restarts",
    "train_seed",
}
_FLOAT_KEYS = {
    "shift_low",
    "shift_high",
    "alpha_explore",
    "discount",
    "policy_lr",
    "variance_cap",
    "fit_lr",
    "threshold",
}
_STR_KEYS = {"task", "test_function", "dataset", "command", "train_function", "variance_update", "liar", "checkpoint", "output_dir"}
_POSITIVE = {"command_dimension", "num_training_functions", "episodes", "num_batches", "budget", "initial_points",
             "samples_per_action", "restarts", "train_restarts"}


class _LineDict(dict):
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if key in out:
            raise ConfigError("duplicate key", key=key, line=line)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = line
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


@dataclass
class ExperimentConfig:
    """A validated experiment description; ``values`` holds every key."""

    values: dict
    lines: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def batch_sizes(self):
        n = self.values["batch_size"]
        return list(n) if isinstance(n, list) else [n]

    def resolved(self):
        return dict(self.values)

    def num_batches_for(self, method, n):
        budget = self.values["budget"]
        if budget is None:
            return self.values["num_batches"]
        spent = n if method == "bssrl" else self.values["initial_points"]
        m = (budget - spent) // n
        if m < 1:
            raise ConfigError(f"budget {budget} leaves no room for a batch of {n}", key="budget", line=self.lines.get("budget"))
        return m

    def fit_config(self, restarts=None):
        return gp.FitConfig(restarts=restarts or self.values["restarts"])

    def env_config(self, n, training=False):
        v = self.values
        return EnvConfig(
            batch_size=n,
            num_batches=self.num_batches_for("bssrl", n),
            alpha_explore=v["alpha_explore"],
            discount=v["discount"],
            fit=self.fit_config(v["train_restarts"] if training else None),
        )

    def policy_config(self):
        v = self.values
        return PolicyConfig(
            lr=v["policy_lr"],
            samples_per_action=v["samples_per_action"],
            variance_update=v["variance_update"],
            variance_cap=v["variance_cap"],
            fit_epochs=v["fit_epochs"],
            fit_lr=v["fit_lr"],
        )

    def train_config(self, n, seed):
        return TrainConfig(
            num_training_functions=self.values["num_training_functions"],
            episodes_per_function=self.values["episodes"],
            env=self.env_config(n, training=True),
            policy=self.policy_config(),
            seed=seed,
        )

    def function_spec(self):
        v = self.values
        return FunctionClassSpec(v["train_function"], v["shift_low"], v["shift_high"])

    def baseline_config(self, n):
        v = self.values
        return BaselineConfig(
            batch_size=n,
            num_batches=self.num_batches_for("batch_bo", n),
            initial_points=v["initial_points"],
            liar=v["liar"],
            alpha_explore=v["alpha_explore"],
            fit=self.fit_config(),
        )

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def make_objective(self):
        v = self.values
        if v["test_function"] is not None:
            return bench.make_benchmark(v["test_function"])
        if v["dataset"] is not None:
            data = bench.load_pregen_dataset(self.resolve_path(v["dataset"]))
            return bench.DatasetObjective(data, maximize=v["maximize"], name=str(v["dataset"]))
        if v["command"] is not None:
            return bench.subprocess_objective(
                v["command"], v["command_dimension"], bounds=v["command_bounds"], maximize=v["maximize"]
            )
        raise ConfigError("no objective source configured")

    def threshold_for(self, objective):
        """Level used for evaluations-to-threshold: configured, else a benchmark default."""
        if self.values["threshold"] is not None:
            return self.values["threshold"]
        if self.values["test_function"] == "booth":
            return objective.normalize_output(0.0) + 0.1
        if self.values["test_function"] == "ackley":
            return objective.normalize_output(0.0) + 0.1
        if isinstance(objective, bench.DatasetObjective):
            return objective.best_value
        return None


def _check_type(key, value, line):
    if value is None:
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key, line=line)
    elif key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key, line=line)
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError("must be finite", key=key, line=line)
    elif key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key, line=line)
    elif key in ("maximize", "adaptive_deploy"):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key, line=line)
    elif key in ("batch_size", "seeds"):
        items = value if isinstance(value, list) else [value]
        if not items or any(isinstance(i, bool) or not isinstance(i, int) for i in items):
            raise ConfigError(f"expected an integer or list of integers, got {value!r}", key=key, line=line)
        if key == "seeds" and not isinstance(value, list):
            value = [value]
    elif key == "command_bounds":
        ok = isinstance(value, list) and all(
            isinstance(b, list) and len(b) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in b)
            for b in value
        )
        if not ok:
            raise ConfigError("expected a list of [lo, hi] pairs", key=key, line=line)
    return value


def parse_config(text, base_dir=None, task=None):
    """Parse and validate YAML config text into an :class:`ExperimentConfig`.

    ``task`` overrides (or supplies) the ``task`` key, as the CLI
    subcommand does.
    """
    try:
        raw = yaml.load(text, Loader=_Loader) if text.strip() else _LineDict()
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"invalid YAML: {exc.problem}", line=line) from None
    if raw is None:
        raw = _LineDict()
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values", line=1)
    lines = getattr(raw, "lines", {})

    values = dict(DEFAULTS)
    values["seeds"] = list(DEFAULTS["seeds"])
    for key, value in raw.items():
        line = lines.get(key)
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key=key, line=line)
        values[key] = _check_type(key, value, line)
    if task is not None:
        values["task"] = task

    def fail(msg, key):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if values["task"] not in TASKS:
        fail(f"task must be one of {TASKS}, got {values['task']!r}", "task")
    for key in _POSITIVE:
        if values[key] is not None and values[key] < 1:
            fail("must be >= 1", key)
    if values["fit_epochs"] < 0:
        fail("must be >= 0", "fit_epochs")
    sizes = values["batch_size"] if isinstance(values["batch_size"], list) else [values["batch_size"]]
    if not sizes or any(n < 1 for n in sizes):
        fail("batch sizes must be >= 1", "batch_size")
    if not values["seeds"]:
        fail("need at least one seed", "seeds")
    if not 0.0 <= values["discount"] <= 1.0:
        fail("must lie in [0, 1]", "discount")
    if values["alpha_explore"] < 0:
        fail("must be >= 0", "alpha_explore")
    if values["policy_lr"] < 0 or values["fit_lr"] < 0:
        fail("learning rates must be >= 0", "policy_lr" if values["policy_lr"] < 0 else "fit_lr")
    if values["variance_cap"] <= 1e-6:
        fail("must exceed the variance floor 1e-6", "variance_cap")
    if values["variance_update"] not in ("literal", "score"):
        fail("must be 'literal' or 'score'", "variance_update")
    if values["liar"] not in ("best", "mean"):
        fail("must be 'best' or 'mean'", "liar")
    if values["train_function"] not in bench.BENCHMARKS:
        fail(f"unknown benchmark; choose from {sorted(bench.BENCHMARKS)}", "train_function")
    if values["shift_low"] > values["shift_high"]:
        fail("shift_low exceeds shift_high", "shift_low")

    sources = [k for k in ("test_function", "dataset", "command") if values[k] is not None]
    if len(sources) > 1:
        fail(f"exactly one objective source allowed, got {sources}", sources[1])
    if values["task"] != "train" and not sources:
        fail("this task needs an objective: test_function, dataset or command", "test_function")
    if values["test_function"] is not None and values["test_function"] not in bench.BENCHMARKS:
        fail(f"unknown benchmark; choose from {sorted(bench.BENCHMARKS)}", "test_function")
    if values["command"] is not None and values["command_dimension"] is None:
        fail("command objectives need command_dimension", "command")
    if values["command_bounds"] is not None and values["command_dimension"] is not None:
        if len(values["command_bounds"]) != values["command_dimension"]:
            fail("need one [lo, hi] pair per dimension", "command_bounds")

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in ("dataset", "checkpoint"):
        if values[key] is not None:
            p = Path(values[key])
            if not (p if p.is_absolute() else base / p).exists():
                fail(f"path does not exist: {values[key]}", key)
    if values["task"] == "deploy" and values["checkpoint"] is None:
        fail("deploy needs a policy checkpoint", "checkpoint")

    cfg = ExperimentConfig(values, dict(lines), base)
    try:
        FunctionClassSpec(values["train_function"], values["shift_low"], values["shift_high"])
    except ValueError as exc:
        fail(str(exc), "shift_low")
    for n in cfg.batch_sizes:
        if values["task"] in ("train", "deploy", "compare"):
            cfg.num_batches_for("bssrl", n)
        if values["task"] in ("baseline", "compare"):
            cfg.num_batches_for("batch_bo", n)
    return cfg


def load_config(path, task=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent, task=task)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


@dataclass
class ComparisonSummary:
    """Best-observed statistics of several methods on shared evaluation checkpoints."""

    checkpoints: np.ndarray
    per_seed: dict
    median: dict
    q25: dict
    q75: dict
    evals_to_threshold: dict
    threshold: float | None = None

    @property
    def iqr(self):
        return {m: self.q75[m] - self.q25[m] for m in self.median}

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "checkpoints": [int(c) for c in self.checkpoints],
            "threshold": self.threshold,
            "methods": {
                m: {
                    "median": clean(self.median[m]),
                    "q25": clean(self.q25[m]),
                    "q75": clean(self.q75[m]),
                    "iqr": clean(self.iqr[m]),
                    "evals_to_threshold": self.evals_to_threshold[m],
                    "per_seed": [clean(row) for row in self.per_seed[m]],
                }
                for m in self.median
            },
        }


def _column_stats(values):
    """Median and quartiles per column, ignoring seeds without data yet."""
    med, lo, hi = [], [], []
    for col in values.T:
        col = col[np.isfinite(col)]
        if col.size == 0:
            med.append(np.nan)
            lo.append(np.nan)
            hi.append(np.nan)
        else:
            med.append(float(np.median(col)))
            lo.append(float(np.percentile(col, 25)))
            hi.append(float(np.percentile(col, 75)))
    return np.array(med), np.array(lo), np.array(hi)


def compare_summary(traces, threshold=None, checkpoints=None):
    """Summarise traces grouped by method, e.g. ``{"bssrl": [...], "batch_bo": [...]}``.

    Each trace is read as a step function: the value at checkpoint ``c`` is
    the best observed with at most ``c`` evaluations.  Checkpoints default
    to every evaluation count appearing in any trace.
    """
    if not traces or any(len(v) == 0 for v in traces.values()):
        raise ConfigError("every method needs at least one trace")
    dims = {t.dimension for group in traces.values() for t in group if t.dimension}
    if len(dims) > 1:
        from .errors import ContractViolation

        raise ContractViolation(f"traces disagree on problem dimension: {sorted(dims)}")
    if checkpoints is None:
        checkpoints = sorted({int(r.evals) for group in traces.values() for t in group for r in t.rows})
    checkpoints = np.asarray(checkpoints, dtype=int)
    per_seed, median, q25, q75, ett = {}, {}, {}, {}, {}
    for method, group in traces.items():
        values = np.array([[t.best_by(c) for c in checkpoints] for t in group], dtype=float)
        per_seed[method] = values
        median[method], q25[method], q75[method] = _column_stats(values)
        ett[method] = None
        if threshold is not None:
            hits = np.flatnonzero(np.isfinite(median[method]) & (median[method] <= threshold))
            if hits.size:
                ett[method] = int(checkpoints[hits[0]])
    return ComparisonSummary(checkpoints, per_seed, median, q25, q75, ett, threshold)


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _train(cfg, n, seed, out, log):
    result = train_policy(cfg.function_spec(), cfg.train_config(n, seed))
    ckpt = out / f"policy_n{n}_seed{seed}.json"
    save_checkpoint(result.net, ckpt, metadata={"train_seed": seed, "training_functions": result.training_functions})
    write_training_log(result.log, out / f"training_n{n}_seed{seed}.csv")
    log(f"trained policy n={n} seed={seed} -> {ckpt.name}")
    return result


def run_experiment(cfg, seeds=None, out_dir=None, log=None):
    """Execute ``cfg`` and write all artifacts; returns a process exit code."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    seeds = list(seeds) if seeds is not None else list(cfg.seeds)
    out = Path(out_dir or cfg.output_dir or os.environ.get(OUTPUT_ENV_VAR) or "runs")
    if not out.is_absolute() and out_dir is None and cfg.output_dir is not None:
        out = cfg.resolve_path(out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    resolved["seeds"] = seeds
    _json_dump(resolved, out / "resolved_config.json")

    summary = {"task": cfg.task, "status": "incomplete", "batch_sizes": {}}
    marker = out / "INCOMPLETE"
    marker.write_text("run did not finish\n", encoding="utf-8")
    try:
        for n in cfg.batch_sizes:
            entry = {}
            traces = {}
            if cfg.task == "train":
                finals = {}
                for seed in seeds:
                    result = _train(cfg, n, seed, out, log)
                    finals[str(seed)] = float(result.returns[-1])
                entry["final_episode_return"] = finals
            else:
                objective = cfg.make_objective()
                net, exclude = None, ()
                if cfg.task == "deploy":
                    net = load_checkpoint(cfg.resolve_path(cfg.checkpoint))
                    if net.batch_size != n or net.dimension != objective.dimension:
                        raise ConfigError(
                            f"checkpoint is for n={net.batch_size}, d={net.dimension}; run has n={n}, d={objective.dimension}",
                            key="checkpoint",
                        )
                elif cfg.task == "compare":
                    result = _train(cfg, n, cfg.train_seed, out, log)
                    net, exclude = result.net, tuple(result.training_functions)
                    entry["train_seed"] = cfg.train_seed
                if net is not None:
                    traces["bssrl"] = []
                    ecfg = cfg.env_config(n)
                    for seed in seeds:
                        rng = np.random.default_rng(seed)
                        if cfg.adaptive_deploy:
                            # the net keeps learning from one seed to the next
                            trace, net = deploy_adaptive(net, objective, ecfg, cfg.policy_config(), rng)
                        else:
                            trace = deploy_policy(net, objective, ecfg, rng, cfg.samples_per_action, exclude=exclude)
                        trace.seed = seed
                        write_trace(trace, out / f"bssrl_n{n}_seed{seed}.csv")
                        traces["bssrl"].append(trace)
                        log(f"bssrl n={n} seed={seed}: best {trace.rows[-1].best_observed:.6g} after {trace.rows[-1].evals} evals")
                if cfg.task in ("baseline", "compare"):
                    traces["batch_bo"] = []
                    bcfg = cfg.baseline_config(n)
                    for seed in seeds:
                        trace = run_batch_bo(objective, bcfg, np.random.default_rng(seed))
                        trace.seed = seed
                        write_trace(trace, out / f"batch_bo_n{n}_seed{seed}.csv")
                        traces["batch_bo"].append(trace)
                        log(f"batch_bo n={n} seed={seed}: best {trace.rows[-1].best_observed:.6g} after {trace.rows[-1].evals} evals")
                if isinstance(objective, bench.SubprocessObjective):
                    objective.close()
                entry.update(compare_summary(traces, threshold=cfg.threshold_for(objective)).to_dict())
            summary["batch_sizes"][str(n)] = entry
        summary["status"] = "complete"
        _json_dump(summary, out / "summary.json")
        marker.unlink()
        return 0
    except ConfigError as exc:
        summary["error"] = str(exc)
        _json_dump(summary, out / "summary.json")
        log(f"config error: {exc}")
        return 2
    except Exception as exc:  # any module failure labels the outputs incomplete
        summary["error"] = f"{type(exc).__name__}: {exc}"
        _json_dump(summary, out / "summary.json")
        log(f"experiment failed: {summary['error']}")
        return 1


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="bssrl", description="Batch sequential sampling with a learned policy.")
    sub = parser.add_subparsers(dest="task", required=True)
    helps = {
        "train": "train a policy on the training function class",
        "deploy": "run a saved policy on the test objective",
        "baseline": "run batch Bayesian optimisation on the test objective",
        "compare": "train, deploy and run the baseline, then summarise",
    }
    for name in TASKS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=_parse_seeds, default=None, help="seed or comma-separated seeds")
        p.add_argument("--out", default=None, help=f"output directory (default: config, then ${OUTPUT_ENV_VAR}, then ./runs)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, task=args.task)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run_experiment(cfg, seeds=args.seed, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
