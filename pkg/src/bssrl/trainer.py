"""Meta-training of the batch-sampling policy and frozen deployment.

Training loops over sampled training functions, then episodes per
function.  Within an episode the policy first acts for ``m`` steps; then,
walking back over the recorded steps, each step's emitted Gaussian
parameters are pushed along the REINFORCE direction weighted by the
reward-to-go, and the network is regressed onto the results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import bench
from .bench import DOMAIN
from .env import EnvConfig, SequentialDesignEnv, cumulative_reward, reward_to_go
from .errors import ContractViolation
from .policy import (
    VARIANCE_CAP,
    PolicyNet,
    SupervisedPair,
    encode_state,
    fit_net,
    policy_forward,
    reinforce_param_update,
    sample_averaged_action,
)

# optimum of each benchmark in normalized coordinates
_NORMALIZED_OPTIMA = {
    "ackley": np.zeros(2),
    "booth": bench.linear_scale(bench.BOOTH_OPTIMUM, bench.BOOTH_BOUNDS[0]),
}


@dataclass
class FunctionClassSpec:
    """Distribution of training functions: a benchmark with a random input shift.

    Each coordinate of the shift is drawn uniformly from
    ``[shift_low, shift_high]`` (normalized units).  ``shift_low ==
    shift_high == 0`` gives the unshifted benchmark every time.
    """

    base: str = "ackley"
    shift_low: float = -1.0
    shift_high: float = 1.0
    normalize_outputs: bool = True

    def __post_init__(self):
        if self.base not in bench.BENCHMARKS:
            raise ContractViolation(f"unknown base function {self.base!r}")
        if self.shift_low > self.shift_high:
            raise ContractViolation("shift_low must not exceed shift_high")
        opt = _NORMALIZED_OPTIMA[self.base]
        if np.any(opt + self.shift_low < DOMAIN[0]) or np.any(opt + self.shift_high > DOMAIN[1]):
            raise ContractViolation("shift range would move the optimum outside the domain")


@dataclass
class PolicyConfig:
    """REINFORCE step size, sampling and supervised-refit settings."""

    lr: float = 0.05
    samples_per_action: int = 10
    variance_update: str = "literal"
    variance_cap: float = VARIANCE_CAP
    fit_epochs: int = 50
    fit_lr: float = 1e-3

    def __post_init__(self):
        if self.samples_per_action < 1:
            raise ContractViolation("samples_per_action must be >= 1")
        if self.variance_update not in ("literal", "score"):
            raise ContractViolation(f"variance_update must be 'literal' or 'score', got {self.variance_update!r}")
        if self.fit_epochs < 0 or self.lr < 0 or self.fit_lr < 0:
            raise ContractViolation("learning rates and epochs must be non-negative")


@dataclass
class TrainConfig:
    num_training_functions: int = 1
    episodes_per_function: int = 200
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0

    def __post_init__(self):
        if self.num_training_functions < 1 or self.episodes_per_function < 1:
            raise ContractViolation("training counts must be >= 1")


@dataclass(frozen=True)
class TrainingLogRow:
    function_index: int
    episode_index: int
    episode_return: float
    total_reward: float
    final_best_observed: float


@dataclass
class TrainingResult:
    net: PolicyNet
    log: list
    training_functions: list

    @property
    def returns(self):
        return np.array([row.episode_return for row in self.log])


def sample_training_function(spec, rng):
    """Draw one training objective from ``spec``."""
    d = len(bench.BENCHMARKS[spec.base][1])
    if spec.shift_low == spec.shift_high == 0.0:
        shift = None
    else:
        shift = rng.uniform(spec.shift_low, spec.shift_high, size=d)
    return bench.make_benchmark(spec.base, shift=shift, normalize_outputs=spec.normalize_outputs)


def _act(net, state, pcfg, rng, dimension):
    sv = encode_state(state)
    params = policy_forward(net, sv)
    action = sample_averaged_action(params, pcfg.samples_per_action, rng, dimension)
    return sv, params, action


def run_training_episode(objective, net, env_cfg, pcfg, rng):
    """Play one episode with ``net`` and build its supervised targets.

    Returns the :class:`~bssrl.env.EpisodeRecord` and one
    :class:`~bssrl.policy.SupervisedPair` per step.
    """
    if net.batch_size != env_cfg.batch_size or net.dimension != objective.dimension:
        raise ContractViolation("policy network shape does not match the environment")
    env = SequentialDesignEnv(objective, env_cfg)
    state = env.reset(rng)
    steps = []
    for _ in range(env_cfg.num_batches):
        sv, params, action = _act(net, state, pcfg, rng, objective.dimension)
        state, _ = env.step(action)
        steps.append((sv, params, action))
    record = env.record()
    record.trace.method = "bssrl"
    pairs = []
    for j, (sv, params, action) in enumerate(steps):
        weight = reward_to_go(record.rewards, j, env_cfg.discount)
        target = reinforce_param_update(
            params, action.reshape(-1), weight, pcfg.lr, rule=pcfg.variance_update, variance_cap=pcfg.variance_cap
        )
        pairs.append(SupervisedPair(sv, target))
    return record, pairs


def train_policy(spec, tc, net=None, progress=None):
    """Run ``s * t`` training episodes, refitting the network after each.

    Deterministic for a given ``tc.seed``.  ``progress`` is an optional
    callable receiving each :class:`TrainingLogRow`.
    """
    net_ss, fn_ss, ep_ss = np.random.SeedSequence(tc.seed).spawn(3)
    d = len(bench.BENCHMARKS[spec.base][1])
    if net is None:
        net = PolicyNet.initialize(
            d, tc.env.batch_size, np.random.default_rng(net_ss), variance_cap=tc.policy.variance_cap
        )
    fn_rng = np.random.default_rng(fn_ss)
    ep_rng = np.random.default_rng(ep_ss)
    log, names = [], []
    for i in range(tc.num_training_functions):
        objective = sample_training_function(spec, fn_rng)
        names.append(objective.name)
        for j in range(tc.episodes_per_function):
            record, pairs = run_training_episode(objective, net, tc.env, tc.policy, ep_rng)
            net = fit_net(net, pairs, tc.policy.fit_epochs, tc.policy.fit_lr)
            row = TrainingLogRow(
                i,
                j,
                cumulative_reward(record.rewards, tc.env.discount),
                float(np.sum(record.rewards)),
                float(record.trace.rows[-1].best_observed),
            )
            log.append(row)
            if progress is not None:
                progress(row)
    return TrainingResult(net, log, names)


def write_training_log(log, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["function_index", "episode_index", "return", "total_reward", "final_best_observed"])
        for r in log:
            writer.writerow(
                [
                    r.function_index,
                    r.episode_index,
                    format(r.episode_return, ".17g"),
                    format(r.total_reward, ".17g"),
                    format(r.final_best_observed, ".17g"),
                ]
            )


def deploy_policy(net, objective, env_cfg, rng, samples_per_action=10, exclude=()):
    """Run one full budget on ``objective`` with the network frozen.

    ``exclude`` lists objective names seen during training; deploying on
    one of them raises unless the caller leaves it empty on purpose.
    """
    if objective.name in exclude:
        raise ContractViolation(f"objective {objective.name!r} was used for training")
    if net.batch_size != env_cfg.batch_size or net.dimension != objective.dimension:
        raise ContractViolation("policy network shape does not match the environment")
    pcfg = PolicyConfig(samples_per_action=samples_per_action)
    env = SequentialDesignEnv(objective, env_cfg)
    state = env.reset(rng)
    for _ in range(env_cfg.num_batches):
        _, _, action = _act(net, state, pcfg, rng, objective.dimension)
        state, _ = env.step(action)
    trace = env.trace
    trace.method = "bssrl"
    return trace


def deploy_adaptive(net, objective, env_cfg, pcfg, rng):
    """Deployment that keeps learning: one training episode, then a refit.

    Returns the trace and the updated network.
    """
    record, pairs = run_training_episode(objective, net, env_cfg, pcfg, rng)
    return record.trace, fit_net(net, pairs, pcfg.fit_epochs, pcfg.fit_lr)
