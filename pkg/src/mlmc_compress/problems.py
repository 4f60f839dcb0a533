"""Synthetic distributed problems and gradient oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Rng, as_gradient


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic gradient noise with ``E||z||^2 = sigma^2``.

    Gaussian with per-coordinate std ``sigma / sqrt(d)``. In strict mode the
    draw is projected onto the ball of radius ``sigma`` so the bound holds
    for every sample, not only in expectation.
    """

    sigma: float = 0.0
    strict: bool = False

    def sample(self, d: int, rng: Rng) -> np.ndarray:
        z = rng.normal(d) * (self.sigma / math.sqrt(d))
        if self.strict:
            n = float(np.sqrt(np.dot(z, z)))
            if n > self.sigma:
                z *= self.sigma / n
        return z


def _matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return A * x if A.ndim == 1 else A @ x


@dataclass(eq=False)
class QuadraticProblem:
    """``f_i(x) = x^T A_i x / 2 - b_i^T x``; ``f`` is their average.

    ``A_i`` may be stored as a diagonal (1-D array). Workers usually share
    one matrix, in which case ``grad_i - grad`` is the constant ``b - b_i``.
    """

    hessians: tuple
    targets: tuple
    noise: NoiseModel = field(default_factory=NoiseModel)
    x0: Optional[np.ndarray] = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hessians = tuple(np.asarray(A, dtype=np.float64) for A in self.hessians)
        self.targets = tuple(np.asarray(b, dtype=np.float64) for b in self.targets)
        if len(self.hessians) != len(self.targets) or not self.hessians:
            raise ValueError("need one (A_i, b_i) pair per worker")
        d = self.targets[0].size
        if self.x0 is None:
            self.x0 = np.zeros(d)
        M = len(self.targets)
        A_bar = self.hessians[0].copy()
        for A in self.hessians[1:]:
            A_bar = A_bar + A
        self.mean_hessian = A_bar / M
        b_bar = self.targets[0].copy()
        for b in self.targets[1:]:
            b_bar = b_bar + b
        self.mean_target = b_bar / M
        if self.mean_hessian.ndim == 1:
            self.x_star = self.mean_target / self.mean_hessian
            self.smoothness = float(np.max(self.mean_hessian))
        else:
            self.x_star = np.linalg.solve(self.mean_hessian, self.mean_target)
            self.smoothness = float(np.max(np.linalg.eigvalsh(self.mean_hessian)))
        self.f_star = self.f(self.x_star)
        self.homogeneous = all(
            (A is self.hessians[0] or np.array_equal(A, self.hessians[0])) and np.array_equal(b, self.targets[0])
            for A, b in zip(self.hessians, self.targets)
        )

    @property
    def dim(self) -> int:
        return int(self.targets[0].size)

    @property
    def num_workers(self) -> int:
        return len(self.targets)

    def f_i(self, x, i: int) -> float:
        return float(0.5 * np.dot(x, _matvec(self.hessians[i], x)) - np.dot(self.targets[i], x))

    def f(self, x) -> float:
        return float(0.5 * np.dot(x, _matvec(self.mean_hessian, x)) - np.dot(self.mean_target, x))

    def grad_i(self, x, i: int) -> np.ndarray:
        return _matvec(self.hessians[i], x) - self.targets[i]

    def grad(self, x) -> np.ndarray:
        return _matvec(self.mean_hessian, x) - self.mean_target

    def stochastic_gradient(self, x, i: int, rng: Rng) -> np.ndarray:
        g = self.grad_i(x, i)
        if self.noise.sigma > 0:
            g = g + self.noise.sample(g.size, rng)
        return g

    def heterogeneity_sq(self, x) -> float:
        """``(1/M) sum_i ||grad_i(x) - grad(x)||^2``."""
        g = self.grad(x)
        return float(np.mean([np.sum((self.grad_i(x, i) - g) ** 2) for i in range(self.num_workers)]))

    def describe(self) -> dict:
        return dict(self.spec)


def make_quadratic(
    d: int,
    M: int,
    L_target: float = 1.0,
    xi_target: float = 0.0,
    seed: int = 0,
    mu: Optional[float] = None,
    sigma: float = 0.0,
    strict_noise: bool = False,
) -> QuadraticProblem:
    """Random quadratic with smoothness ``L_target`` and heterogeneity ``xi_target``.

    The shared Hessian has eigenvalues log-spaced from ``L_target`` down to
    ``mu`` (default ``L_target / 10``). Worker targets are the common target
    shifted along centered random directions scaled so that the mean squared
    shift equals ``xi_target^2``. The matrix and common target depend only on
    ``(d, seed)``, not on ``M``.
    """
    if d < 1 or M < 1:
        raise ValueError("d and M must be positive")
    if not L_target > 0 or xi_target < 0:
        raise ValueError("need L_target > 0 and xi_target >= 0")
    mu = L_target / 10 if mu is None else mu
    base_rng = np.random.default_rng([seed, 0])
    Q, _ = np.linalg.qr(base_rng.standard_normal((d, d)))
    eig = np.geomspace(L_target, mu, d)
    A = (Q * eig) @ Q.T
    A = 0.5 * (A + A.T)
    b = A @ base_rng.standard_normal(d)

    shifts = np.zeros((M, d))
    if M > 1 and xi_target > 0:
        raw = np.random.default_rng([seed, 1]).standard_normal((M, d))
        raw -= raw.mean(axis=0)
        spread = float(np.mean(np.sum(raw**2, axis=1)))
        if spread == 0.0:
            raise ValueError("cannot realize the requested heterogeneity")
        shifts = raw * (xi_target / math.sqrt(spread))
    spec = dict(type="quadratic", d=d, M=M, L=L_target, xi=xi_target, seed=seed, mu=mu,
                sigma=sigma, strict_noise=strict_noise)
    return QuadraticProblem(
        hessians=(A,) * M,
        targets=tuple(b + s for s in shifts),
        noise=NoiseModel(sigma, strict_noise),
        spec=spec,
    )


def make_sign_conflict_problem(a: float = 2.0, sigma: float = 0.0) -> QuadraticProblem:
    """Two workers ``f_i(x) = ||x - c_i||^2 / 2`` with ``c_1 = (a, 1)``, ``c_2 = (-a, 1)``.

    From ``x = 0`` each worker's largest gradient entry is the first one and
    the two cancel, so direct Top-1 never moves while ``x* = (0, 1)``.
    """
    if not a > 1:
        raise ValueError("need a > 1 for the first coordinate to dominate")
    eye = np.ones(2)
    return QuadraticProblem(
        hessians=(eye, eye),
        targets=(np.array([a, 1.0]), np.array([-a, 1.0])),
        noise=NoiseModel(sigma),
        spec=dict(type="sign_conflict", a=a, sigma=sigma),
    )


@dataclass(frozen=True)
class ExpDecayOracle:
    """Vectors whose sorted magnitudes are ``v0 * exp(-r j / 2)``, ``j = 0..d-1``."""

    r: float
    d: int
    v0: float = 1.0

    def magnitudes(self) -> np.ndarray:
        return self.v0 * np.exp(-0.5 * self.r * np.arange(self.d))

    def norm_sq(self) -> float:
        return self.v0**2 * math.expm1(-self.r * self.d) / math.expm1(-self.r)


def exp_decay_sample(oracle: ExpDecayOracle, rng: Rng) -> np.ndarray:
    if not oracle.r > 0:
        raise ValueError("decay rate must be positive")
    gen = rng.generator
    mags = oracle.magnitudes()
    signs = np.where(gen.random(oracle.d) < 0.5, -1.0, 1.0)
    out = np.empty(oracle.d)
    out[gen.permutation(oracle.d)] = signs * mags
    return out


def make_exp_decay_quadratic(d: int, M: int, r: float, sigma: float = 0.0, seed: int = 0,
                             v0: float = 1.0) -> QuadraticProblem:
    """``f(x) = ||x||^2 / 2`` started where the gradient has an exponential profile."""
    x0 = exp_decay_sample(ExpDecayOracle(r, d, v0), Rng(seed, 0, 0, purpose=7))
    eye = np.ones(d)
    zero = np.zeros(d)
    return QuadraticProblem(
        hessians=(eye,) * M,
        targets=(zero,) * M,
        noise=NoiseModel(sigma),
        x0=x0,
        spec=dict(type="exp_decay", d=d, M=M, r=r, sigma=sigma, seed=seed, v0=v0),
    )


@dataclass(eq=False)
class LogisticProblem:
    """L2-regularized logistic regression split across workers.

    Stochastic gradients use one uniformly drawn local sample. Not used by
    the acceptance checks; the optimum is found numerically.
    """

    features: tuple
    labels: tuple
    reg: float = 1e-3
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        from scipy.optimize import minimize

        self.features = tuple(np.asarray(X, dtype=np.float64) for X in self.features)
        self.labels = tuple(np.asarray(y, dtype=np.float64) for y in self.labels)
        d = self.dim
        self.x0 = np.zeros(d)
        row_sq = max(float(np.max(np.sum(X**2, axis=1))) for X in self.features)
        self.smoothness = 0.25 * row_sq + self.reg
        res = minimize(self.f, self.x0, jac=self.grad, method="L-BFGS-B", options=dict(gtol=1e-12, ftol=1e-15, maxiter=10000))
        self.x_star = res.x
        self.f_star = float(res.fun)
        self.homogeneous = False

    @property
    def dim(self) -> int:
        return int(self.features[0].shape[1])

    @property
    def num_workers(self) -> int:
        return len(self.features)

    def f_i(self, x, i):
        z = self.labels[i] * (self.features[i] @ x)
        return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.reg * np.dot(x, x))

    def f(self, x):
        return float(np.mean([self.f_i(x, i) for i in range(self.num_workers)]))

    def _grad_rows(self, X, y, x):
        z = y * (X @ x)
        w = -y * 0.5 * (1.0 - np.tanh(0.5 * z))  # -y * sigmoid(-z), overflow-free
        return X * w[:, None]

    def grad_i(self, x, i):
        return self._grad_rows(self.features[i], self.labels[i], x).mean(axis=0) + self.reg * x

    def grad(self, x):
        return np.mean([self.grad_i(x, i) for i in range(self.num_workers)], axis=0)

    def stochastic_gradient(self, x, i, rng: Rng):
        X, y = self.features[i], self.labels[i]
        j = int(rng.generator.integers(X.shape[0]))
        return self._grad_rows(X[j : j + 1], y[j : j + 1], x)[0] + self.reg * x

    def describe(self):
        return dict(self.spec)


def make_logistic(d: int, M: int, n_per_worker: int = 200, seed: int = 0, reg: float = 1e-3,
                  shift: float = 0.5) -> LogisticProblem:
    """Worker ``i`` draws features around its own mean ``shift * u_i``."""
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(d)
    feats, labs = [], []
    for _ in range(M):
        X = rng.standard_normal((n_per_worker, d)) + shift * rng.standard_normal(d)
        p = 1.0 / (1.0 + np.exp(-X @ w_true))
        feats.append(X)
        labs.append(np.where(rng.random(n_per_worker) < p, 1.0, -1.0))
    spec = dict(type="logistic", d=d, M=M, n_per_worker=n_per_worker, seed=seed, reg=reg, shift=shift)
    return LogisticProblem(tuple(feats), tuple(labs), reg, spec)


def stochastic_gradient(problem, x, worker: int, rng: Rng) -> np.ndarray:
    return problem.stochastic_gradient(as_gradient(x), worker, rng)
