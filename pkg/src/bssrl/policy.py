"""Gaussian batch-sampling policy parameterised by a small ReLU network.

The network maps an encoded state (flattened last batch, GP-minimum mean,
GP-minimum std) to a mean and a variance for every action coordinate.
Learning happens in two stages per episode:

1. :func:`reinforce_param_update` nudges the emitted Gaussian parameters
   for each step using the reward-to-go as weight;
2. :func:`fit_net` regresses the network onto those updated parameters.

Backpropagation is written out by hand (numpy only) so it can be checked
against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bench import DOMAIN
from .errors import ContractViolation

HIDDEN = (16, 16)
VARIANCE_FLOOR = 1e-6
VARIANCE_CAP = 9.0
CHECKPOINT_FORMAT = "bssrl-policy"
CHECKPOINT_VERSION = 1


def softplus(z):
    return np.logaddexp(0.0, z)


def inverse_softplus(v):
    v = np.asarray(v, dtype=float)
    return v + np.log(-np.expm1(-v))


@dataclass
class PolicyParams:
    """Per-coordinate Gaussian means and variances for one batch."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).reshape(-1)
        self.variances = np.asarray(self.variances, dtype=float).reshape(-1)
        if self.means.shape != self.variances.shape:
            raise ContractViolation("means and variances must have equal length")
        if np.any(self.variances <= 0):
            raise ContractViolation("policy variances must be positive")


@dataclass
class SupervisedPair:
    input: np.ndarray
    target: PolicyParams


def encode_state(state):
    """Flatten the last batch row-major, then append min mean and min std."""
    batch = np.asarray(state.last_batch, dtype=float)
    return np.concatenate([batch.reshape(-1), [float(state.min_mean), float(state.min_std)]])


class PolicyNet:
    """``(d n + 2) -> 16 -> 16 -> 2 d n`` feed-forward network.

    The first ``d n`` outputs are means (identity head); the rest pass
    through softplus and are clamped to ``[1e-6, variance_cap]``.
    """

    def __init__(self, weights, biases, dimension, batch_size, variance_cap=VARIANCE_CAP):
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.dimension = int(dimension)
        self.batch_size = int(batch_size)
        self.variance_cap = float(variance_cap)
        p = self.action_size
        if self.weights[0].shape[1] != p + 2 or self.weights[-1].shape[0] != 2 * p:
            raise ContractViolation(
                f"layer shapes {[w.shape for w in self.weights]} do not fit d={dimension}, n={batch_size}"
            )

    @classmethod
    def initialize(cls, dimension, batch_size, rng, hidden=HIDDEN, variance_cap=VARIANCE_CAP, output_scale=0.01):
        """He-initialised hidden layers; a near-zero output layer so the
        untrained policy centres on the origin with variance ``ln 2``."""
        p = dimension * batch_size
        sizes = [p + 2, *hidden, 2 * p]
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            std = output_scale if last else np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, dimension, batch_size, variance_cap)

    @classmethod
    def zeros(cls, dimension, batch_size, hidden=HIDDEN, variance_cap=VARIANCE_CAP):
        p = dimension * batch_size
        sizes = [p + 2, *hidden, 2 * p]
        weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(o) for o in sizes[1:]]
        return cls(weights, biases, dimension, batch_size, variance_cap)

    @property
    def action_size(self):
        return self.dimension * self.batch_size

    @property
    def state_size(self):
        return self.action_size + 2

    def copy(self):
        return PolicyNet(self.weights, self.biases, self.dimension, self.batch_size, self.variance_cap)

    def get_flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = 0
        for i in range(len(self.weights)):
            for arr in (self.weights[i], self.biases[i]):
                arr[...] = theta[k : k + arr.size].reshape(arr.shape)
                k += arr.size

    def raw_forward(self, X):
        """Pre-transform outputs for a stack of state vectors, plus the cache for backprop."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.state_size:
            raise ContractViolation(f"state vector length {X.shape[1]} != {self.state_size}")
        activations = [X]
        pre = []
        a = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            pre.append(z)
            a = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
            activations.append(a)
        return a, (activations, pre)

    def backward(self, grad_out, cache):
        """Gradients of a scalar loss w.r.t. every weight and bias."""
        activations, pre = cache
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        delta = grad_out
        for i in reversed(range(len(self.weights))):
            gW[i] = delta.T @ activations[i]
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (pre[i - 1] > 0)
        return gW, gb


def policy_forward(net, sv):
    """Gaussian parameters emitted for one state vector."""
    z, _ = net.raw_forward(np.asarray(sv, dtype=float).reshape(1, -1))
    z = z[0]
    p = net.action_size
    variances = np.clip(softplus(z[p:]), VARIANCE_FLOOR, net.variance_cap)
    return PolicyParams(z[:p].copy(), variances)


def sample_averaged_action(params, K, rng, dimension, domain=DOMAIN):
    """Average ``K`` Gaussian draws and reshape to ``(n, d)`` points in the domain."""
    if K < 1:
        raise ContractViolation("sample count K must be >= 1")
    std = np.sqrt(params.variances)
    draws = params.means + std * rng.standard_normal((K, params.means.size))
    action = draws.mean(axis=0).reshape(-1, dimension)
    return np.clip(action, domain[0], domain[1])


def reinforce_param_update(
    params, action, weight, lr, rule="literal", variance_floor=VARIANCE_FLOOR, variance_cap=VARIANCE_CAP
):
    """One REINFORCE step on the emitted Gaussian parameters.

    ``rule="literal"`` applies the increments

        mu   += lr * w * (ac - mu) / var
        var  += -0.5 * lr * w * ((ac - mu)**2 / var + 1 / var)

    ``rule="score"`` uses the exact log-density derivative for the variance
    instead, ``lr * w * ((ac - mu)**2 - var) / (2 var**2)``.  Variances are
    clamped into ``[variance_floor, variance_cap]`` afterwards.
    """
    ac = np.asarray(action, dtype=float).reshape(-1)
    mu, var = params.means, params.variances
    if ac.shape != mu.shape:
        raise ContractViolation(f"action length {ac.size} != parameter length {mu.size}")
    resid = ac - mu
    new_mu = mu + lr * weight * resid / var
    if rule == "literal":
        new_var = var + (-0.5) * lr * weight * (resid**2 / var + 1.0 / var)
    elif rule == "score":
        new_var = var + lr * weight * (resid**2 - var) / (2.0 * var**2)
    else:
        raise ContractViolation(f"unknown variance update rule {rule!r}")
    return PolicyParams(new_mu, np.clip(new_var, variance_floor, variance_cap))


def _stack_pairs(net, pairs):
    X = np.array([np.asarray(pr.input, dtype=float) for pr in pairs])
    T = np.array([np.concatenate([pr.target.means, inverse_softplus(pr.target.variances)]) for pr in pairs])
    if X.shape[1] != net.state_size or T.shape[1] != 2 * net.action_size:
        raise ContractViolation("supervised pairs do not match the network's shapes")
    return X, T


def mse_loss_and_grad(net, X, T):
    """Mean squared error between raw network outputs and raw targets."""
    Z, cache = net.raw_forward(X)
    diff = Z - T
    loss = float(np.mean(diff**2))
    gW, gb = net.backward(2.0 * diff / diff.size, cache)
    return loss, gW, gb


def fit_net(net, pairs, epochs=50, lr=1e-3):
    """Full-batch gradient descent on the supervised pairs.

    Variances are compared after the inverse softplus, i.e. in the space
    the network produces them.  A step that would raise the loss is
    rejected and the step size halved, so the loss never increases.
    Returns a new network; ``net`` is left untouched.
    """
    if not pairs:
        raise ContractViolation("fit_net needs at least one supervised pair")
    X, T = _stack_pairs(net, pairs)
    current = net.copy()
    loss, gW, gb = mse_loss_and_grad(current, X, T)
    step = lr
    for _ in range(epochs):
        trial = current.copy()
        for i in range(len(trial.weights)):
            trial.weights[i] -= step * gW[i]
            trial.biases[i] -= step * gb[i]
        trial_loss, tW, tb = mse_loss_and_grad(trial, X, T)
        if trial_loss <= loss:
            current, loss, gW, gb = trial, trial_loss, tW, tb
        else:
            step *= 0.5
    return current


def save_checkpoint(net, path, metadata=None):
    """Write the network as versioned JSON; floats use ``repr`` so reloading is bit-exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dimension": net.dimension,
        "batch_size": net.batch_size,
        "variance_cap": net.variance_cap,
        "layers": [
            {"shape": list(W.shape), "weight": W.tolist(), "bias": b.tolist()} for W, b in zip(net.weights, net.biases)
        ],
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    weights = [np.array(layer["weight"], dtype=float).reshape(layer["shape"]) for layer in doc["layers"]]
    biases = [np.array(layer["bias"], dtype=float) for layer in doc["layers"]]
    return PolicyNet(weights, biases, doc["dimension"], doc["batch_size"], doc["variance_cap"])
