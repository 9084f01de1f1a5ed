"""Gaussian-process regression with an ARD Matern-5/2 kernel.

Targets are standardised before fitting; kernel hyperparameters (per-dimension
lengthscales, signal variance, noise variance) maximise the log marginal
likelihood via multi-start L-BFGS-B on log-parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from ..errors import NotEnoughDataError

SQRT5 = math.sqrt(5.0)
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

# bounds on log(lengthscale), log(signal variance), log(noise variance)
LOG_LS_BOUNDS = (math.log(1e-2), math.log(20.0))
LOG_VAR_BOUNDS = (math.log(1e-2), math.log(1e2))
LOG_NOISE_BOUNDS = (math.log(1e-8), math.log(1.0))


def _scaled_sqdist(X1, X2, ls):
    A = X1 / ls
    B = X2 / ls
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def matern52(X1, X2, lengthscales, variance):
    r = np.sqrt(_scaled_sqdist(np.atleast_2d(X1), np.atleast_2d(X2), lengthscales))
    return variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def _cholesky_with_jitter(K):
    """Lower Cholesky factor, adding escalating diagonal jitter on failure."""
    scale = max(1.0, float(np.mean(np.diag(K))))
    for jitter in JITTERS:
        try:
            return cholesky(K + jitter * scale * np.eye(len(K)), lower=True), jitter
        except LinAlgError:
            continue
    raise LinAlgError("kernel matrix is not positive definite even with jitter 1e-4")


def _neg_lml_and_grad(theta, X, y):
    D = X.shape[1]
    ls = np.exp(theta[:D])
    var = math.exp(theta[D])
    noise = math.exp(theta[D + 1])
    n = len(y)
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2 / ls**2  # (n, n, D)
    r = np.sqrt(diff2.sum(-1))
    e = np.exp(-SQRT5 * r)
    K = var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    try:
        L, jitter = _cholesky_with_jitter(K + noise * np.eye(n))
    except LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv  # d(lml)/dK = W / 2
    grad = np.empty_like(theta)
    # dk/dlog(ls_i) = var * 5/3 (1 + sqrt5 r) exp(-sqrt5 r) * diff2_i
    common = var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for i in range(D):
        grad[i] = -0.5 * np.sum(W * common * diff2[:, :, i])
    grad[D] = -0.5 * np.sum(W * K)
    grad[D + 1] = -0.5 * noise * np.trace(W)
    return nll, grad


@dataclass
class GaussianProcess:
    X: np.ndarray
    y_raw: np.ndarray
    lengthscales: np.ndarray
    signal_variance: float  # standardised units
    noise_variance: float  # standardised units
    y_mean: float
    y_std: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        y = (np.asarray(self.y_raw, dtype=np.float64) - self.y_mean) / self.y_std
        K = matern52(self.X, self.X, self.lengthscales, self.signal_variance)
        self.L, self.jitter = _cholesky_with_jitter(K + self.noise_variance * np.eye(len(y)))
        self.alpha = cho_solve((self.L, True), y)

    @property
    def signal_std(self) -> float:
        """Prior standard deviation of the latent function, in target units."""
        return math.sqrt(self.signal_variance) * self.y_std

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_variance) * self.y_std

    def log_marginal_likelihood(self) -> float:
        theta = np.concatenate([np.log(self.lengthscales),
                                [math.log(self.signal_variance), math.log(self.noise_variance)]])
        y = (self.y_raw - self.y_mean) / self.y_std
        return -_neg_lml_and_grad(theta, self.X, y)[0]

    def posterior(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and standard deviation, in target units."""
        P = np.atleast_2d(np.asarray(points, dtype=np.float64))
        Ks = matern52(self.X, P, self.lengthscales, self.signal_variance)
        mean = Ks.T @ self.alpha
        v = solve_triangular(self.L, Ks, lower=True)
        var = np.maximum(self.signal_variance - (v * v).sum(0), 0.0)
        return mean * self.y_std + self.y_mean, np.sqrt(var) * self.y_std

    def posterior_joint(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean vector and covariance matrix, in target units."""
        P = np.atleast_2d(np.asarray(points, dtype=np.float64))
        Ks = matern52(self.X, P, self.lengthscales, self.signal_variance)
        mean = Ks.T @ self.alpha
        v = solve_triangular(self.L, Ks, lower=True)
        cov = matern52(P, P, self.lengthscales, self.signal_variance) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        return mean * self.y_std + self.y_mean, cov * self.y_std**2


def gp_fit(X, y, seed: int = 0, restarts: int = 4) -> GaussianProcess:
    """Fit a GP to finite observations; non-finite targets are dropped.

    Raises :class:`NotEnoughDataError` with fewer than two finite targets.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(y)
    X, y = X[keep], y[keep]
    if len(y) < 2:
        raise NotEnoughDataError(f"need at least 2 finite observations, got {len(y)}")
    D = X.shape[1]
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    bounds = [LOG_LS_BOUNDS] * D + [LOG_VAR_BOUNDS, LOG_NOISE_BOUNDS]
    starts = [np.array([math.log(0.5)] * D + [0.0, math.log(1e-3)])]
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for _ in range(restarts):
        starts.append(lo + rng.random(len(bounds)) * (hi - lo))

    best = None
    for theta0 in starts:
        res = minimize(_neg_lml_and_grad, theta0, args=(X, ys), jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": 200})
        if best is None or res.fun < best.fun:
            best = res
    theta = np.clip(best.x, lo, hi)
    return GaussianProcess(X, y, np.exp(theta[:D]), float(math.exp(theta[D])),
                           float(math.exp(theta[D + 1])), y_mean, y_std)
