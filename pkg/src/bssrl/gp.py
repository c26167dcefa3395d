"""Gaussian-process regression with an ARD squared-exponential kernel.

Zero prior mean, Gaussian observation noise, hyperparameters fitted by
maximum marginal likelihood.  The pieces are deliberately small functions
so each can be checked against a dense textbook implementation:

>>> theta = GPHyperparams([1.0], 1.0, 0.0)
>>> round(kernel_eval([0.0], [1.0], theta), 6)
0.606531
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ContractViolation, NumericalError

JITTER_START = 1e-8
JITTER_MAX = 1e-2
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel lengthscales, signal variance ``s2`` and noise variance ``sigma2``."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ell = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        object.__setattr__(self, "lengthscales", ell)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if ell.size == 0 or not np.all(np.isfinite(ell)) or np.any(ell <= 0):
            raise ContractViolation(f"lengthscales must be finite and positive, got {ell}")
        if not (math.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ContractViolation(f"signal variance must be positive, got {self.signal_variance}")
        if not (math.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise ContractViolation(f"noise variance must be non-negative, got {self.noise_variance}")

    @property
    def dimension(self):
        return self.lengthscales.size

    def to_log(self):
        return np.concatenate([np.log(self.lengthscales), [math.log(self.signal_variance), math.log(self.noise_variance)]])

    @classmethod
    def from_log(cls, p):
        p = np.asarray(p, dtype=float)
        return cls(np.exp(p[:-2]), math.exp(p[-2]), math.exp(p[-1]))


@dataclass
class Dataset:
    """Observed inputs ``(N, d)`` and outputs ``(N,)``; grows as batches arrive."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1) if self.inputs.size else self.inputs.reshape(0, 1)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ContractViolation(f"{self.inputs.shape[0]} inputs but {self.outputs.shape[0]} outputs")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ContractViolation("dataset contains non-finite values")

    @classmethod
    def empty(cls, dimension):
        return cls(np.empty((0, dimension)), np.empty(0))

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def dimension(self):
        return self.inputs.shape[1]

    def extend(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[1] != self.dimension:
            raise ContractViolation(f"new inputs have dimension {X.shape[1]}, dataset has {self.dimension}")
        return Dataset(np.vstack([self.inputs, X]), np.concatenate([self.outputs, y]))


@dataclass
class FitConfig:
    """Search box and restart budget for :func:`fit_hyperparams`."""

    lengthscale_bounds: tuple = (1e-2, 1e2)
    signal_bounds: tuple = (1e-4, 1e2)
    noise_bounds: tuple = (1e-8, 1.0)
    restarts: int = 5
    seed: int = 0
    maxiter: int = 200

    def __post_init__(self):
        if self.restarts < 1:
            raise ContractViolation("restarts must be >= 1")

    def log_bounds(self, d):
        lb = [tuple(np.log(self.lengthscale_bounds))] * d
        return lb + [tuple(np.log(self.signal_bounds)), tuple(np.log(self.noise_bounds))]


@dataclass(frozen=True)
class MinStatistics:
    """Posterior mean and std at the candidate with the smallest posterior mean."""

    argmin: np.ndarray
    min_mean: float
    min_std: float
    index: int = field(default=-1)


# ---------------------------------------------------------------------------
# Kernel algebra
# ---------------------------------------------------------------------------


def _check_dims(A, theta):
    if A.shape[-1] != theta.dimension:
        raise ContractViolation(f"point dimension {A.shape[-1]} != {theta.dimension} lengthscales")


def kernel_eval(x, x2, theta):
    """Squared-exponential ARD covariance between two single points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    _check_dims(x, theta)
    _check_dims(x2, theta)
    r2 = np.sum(((x - x2) / theta.lengthscales) ** 2)
    return float(theta.signal_variance * math.exp(-0.5 * r2))


def _scaled_sqdist(A, B, lengthscales):
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    return np.sum(diff**2, axis=-1)


def _cross_covariance_expanded(A, B, theta):
    # |a-b|^2 = |a|^2 + |b|^2 - 2ab: faster for large candidate sweeps, ~1e-15 off
    a = A / theta.lengthscales
    b = B / theta.lengthscales
    r2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return theta.signal_variance * np.exp(-0.5 * np.maximum(r2, 0.0))


def cross_covariance(A, B, theta):
    """Kernel matrix between point sets ``A (n, d)`` and ``B (m, d)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    _check_dims(A, theta)
    _check_dims(B, theta)
    return theta.signal_variance * np.exp(-0.5 * _scaled_sqdist(A, B, theta.lengthscales))


def gram_matrix(X, theta, jitter=None):
    """``K(X, X) + (sigma2 + jitter) I``.

    ``jitter`` defaults to ``1e-8 * s2``; pass ``0`` for the bare matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ContractViolation("gram matrix of an empty point set")
    if jitter is None:
        jitter = JITTER_START * theta.signal_variance
    K = cross_covariance(X, X, theta)
    K[np.diag_indices_from(K)] += theta.noise_variance + jitter
    return K


def _factorize(X, theta, jitter=None):
    """Cholesky factor of the regularised Gram matrix, escalating jitter on failure."""
    if jitter is not None:
        levels = [jitter]
    else:
        levels = []
        level = JITTER_START
        while level <= JITTER_MAX * (1 + 1e-9):
            levels.append(level * theta.signal_variance)
            level *= 10.0
    K0 = cross_covariance(X, X, theta)
    for jit in levels:
        K = K0.copy()
        K[np.diag_indices_from(K)] += theta.noise_variance + jit
        try:
            L = linalg.cholesky(K, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jit
    raise NumericalError(
        "Gram matrix not positive definite after maximum jitter",
        diagnostics={"jitter_levels": levels, "n": X.shape[0]},
    )


def neg_log_marginal_likelihood(data, theta, jitter=None):
    """Negative log evidence ``0.5 (y^T K^-1 y + log|K| + N log 2 pi)``."""
    if len(data) == 0:
        raise ContractViolation("likelihood of an empty dataset")
    L, _ = _factorize(data.inputs, theta, jitter)
    alpha = linalg.cho_solve((L, True), data.outputs, check_finite=False)
    return float(0.5 * (data.outputs @ alpha) + np.sum(np.log(np.diag(L))) + 0.5 * len(data) * LOG_2PI)


def _nll_and_grad(logp, X, y):
    """Likelihood objective and its gradient in log-parameter space."""
    theta = GPHyperparams.from_log(logp)
    d = theta.dimension
    sq = (X[:, None, :] - X[None, :, :]) ** 2
    Kf = theta.signal_variance * np.exp(-0.5 * np.sum(sq / theta.lengthscales**2, axis=-1))
    n = X.shape[0]
    L = None
    level = JITTER_START
    while level <= JITTER_MAX * (1 + 1e-9):
        jit = level * theta.signal_variance
        K = Kf.copy()
        K[np.diag_indices(n)] += theta.noise_variance + jit
        try:
            L = linalg.cholesky(K, lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            level *= 10.0
    if L is None:
        return np.inf, np.zeros_like(logp)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    value = 0.5 * (y @ alpha) + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = Kinv - np.outer(alpha, alpha)  # dNLL/dK = W / 2
    grad = np.empty(d + 2)
    for j in range(d):
        dK = Kf * sq[:, :, j] / theta.lengthscales[j] ** 2
        grad[j] = 0.5 * np.sum(W * dK)
    # jitter is tied to s2, so it moves with log s2
    grad[d] = 0.5 * (np.sum(W * Kf) + jit * np.trace(W))
    grad[d + 1] = 0.5 * theta.noise_variance * np.trace(W)
    return float(value), grad


def _initial_guesses(data, cfg, rng, warm_start):
    d = data.dimension
    bounds = np.array(cfg.log_bounds(d))
    y = data.outputs
    s2 = float(np.clip(np.mean(y**2) if len(y) else 1.0, *cfg.signal_bounds))
    if s2 <= cfg.signal_bounds[0]:
        s2 = float(cfg.signal_bounds[0]) * 10
    spread = np.std(data.inputs, axis=0) if len(data) > 1 else np.ones(d)
    ell = np.clip(np.where(spread > 0, spread, 1.0), *cfg.lengthscale_bounds)
    noise = float(np.clip(1e-3 * s2, *cfg.noise_bounds))
    guesses = [GPHyperparams(ell, s2, noise).to_log()]
    if warm_start is not None:
        guesses.append(np.clip(warm_start.to_log(), bounds[:, 0], bounds[:, 1]))
    for _ in range(cfg.restarts - 1):
        guesses.append(rng.uniform(bounds[:, 0], bounds[:, 1]))
    return [np.clip(g, bounds[:, 0], bounds[:, 1]) for g in guesses], bounds


def fit_hyperparams(data, cfg=None, warm_start=None):
    """Maximum-likelihood hyperparameters by multi-start L-BFGS-B in log space.

    The start set is a data-driven guess, ``warm_start`` if given, and
    ``restarts - 1`` log-uniform draws from a generator seeded with
    ``cfg.seed``.  The result is never worse than any start point.
    """
    cfg = cfg or FitConfig()
    if len(data) == 0:
        raise ContractViolation("cannot fit hyperparameters to an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    guesses, bounds = _initial_guesses(data, cfg, rng, warm_start)
    X, y = data.inputs, data.outputs

    best_p, best_f = None, np.inf
    failures = []
    for g in guesses:
        f0, _ = _nll_and_grad(g, X, y)
        if np.isfinite(f0) and f0 < best_f:
            best_p, best_f = g, f0
        try:
            res = optimize.minimize(
                _nll_and_grad,
                g,
                args=(X, y),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": cfg.maxiter},
            )
        except (ValueError, FloatingPointError) as exc:
            failures.append(str(exc))
            continue
        p = np.clip(res.x, bounds[:, 0], bounds[:, 1])
        f, _ = _nll_and_grad(p, X, y)
        if np.isfinite(f) and f < best_f:
            best_p, best_f = p, f
    if best_p is None:
        raise NumericalError(
            "likelihood was not finite at any restart",
            diagnostics={"starts": [g.tolist() for g in guesses], "failures": failures},
        )
    return GPHyperparams.from_log(best_p)


# ---------------------------------------------------------------------------
# Posterior
# ---------------------------------------------------------------------------


class GPModel:
    """A GP conditioned on a dataset under fixed hyperparameters.

    Immutable after construction; :meth:`condition` returns a new model.
    """

    def __init__(self, data, hyperparams):
        if len(data) and data.dimension != hyperparams.dimension:
            raise ContractViolation(f"data dimension {data.dimension} != {hyperparams.dimension} lengthscales")
        self.data = Dataset(data.inputs.copy(), data.outputs.copy())
        self.hyperparams = hyperparams
        if len(data):
            self.chol, self.jitter = _factorize(self.data.inputs, hyperparams)
            self.alpha = linalg.cho_solve((self.chol, True), self.data.outputs, check_finite=False)
        else:
            self.chol, self.jitter, self.alpha = None, 0.0, np.empty(0)

    @property
    def dimension(self):
        return self.hyperparams.dimension

    def predict(self, X):
        """Posterior mean and standard deviation at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_dims(X, self.hyperparams)
        s2 = self.hyperparams.signal_variance
        if self.chol is None:
            return np.zeros(X.shape[0]), np.full(X.shape[0], math.sqrt(s2))
        Ks = cross_covariance(X, self.data.inputs, self.hyperparams)
        mean = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = s2 - np.sum(v**2, axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def predict_mean(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _check_dims(X, self.hyperparams)
        if self.chol is None:
            return np.zeros(X.shape[0])
        return _cross_covariance_expanded(X, self.data.inputs, self.hyperparams) @ self.alpha

    def condition(self, X, y):
        """Model with extra observations and the same hyperparameters."""
        if len(self.data) == 0:
            data = Dataset(np.atleast_2d(X), y)
        else:
            data = self.data.extend(X, y)
        return GPModel(data, self.hyperparams)


def fit_model(data, cfg=None, warm_start=None):
    """Fit hyperparameters and condition on ``data`` in one call."""
    return GPModel(data, fit_hyperparams(data, cfg, warm_start))


def posterior_predict(model, x):
    """Posterior ``(mean, std)`` of the latent function at one point."""
    mean, std = model.predict(np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(std[0])


def min_statistics(model, candidates):
    """Locate the candidate with the lowest posterior mean (first index on ties)."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ContractViolation("min_statistics needs at least one candidate")
    means = model.predict_mean(candidates)
    i = int(np.argmin(means))
    mean, std = model.predict(candidates[i : i + 1])
    return MinStatistics(candidates[i].copy(), float(mean[0]), float(std[0]), i)


def candidate_grid(dimension, points_per_dim=64, random_points=4096, seed=0, domain=(-3.0, 3.0)):
    """Default search set for argmin/argmax over the normalized domain.

    A regular ``points_per_dim ** d`` grid for ``d <= 2``; otherwise
    ``random_points`` uniform draws from a fixed seed.
    """
    if dimension <= 2:
        axis = np.linspace(domain[0], domain[1], points_per_dim)
        mesh = np.meshgrid(*([axis] * dimension), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, dimension)
    rng = np.random.default_rng(seed)
    return rng.uniform(domain[0], domain[1], size=(random_points, dimension))
