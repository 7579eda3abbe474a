"""Spatiotemporal Gaussian-process belief over one sensor channel."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr

from .errors import InvalidArgumentError, InvalidParametersError, NumericalError

MAX_JITTER = 1e-4
CHANNELS = ("reactive", "turbidity")


@dataclass(frozen=True)
class GPHyperparams:
    sigma_f: float = 0.3
    ell_s: float = 150.0
    ell_t: float = 3600.0
    sigma_n: float = 0.02
    jitter: float = 1e-8

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.ell_s > 0 and self.ell_t > 0):
            raise InvalidParametersError("sigma_f, ell_s and ell_t must be > 0")
        if not (self.sigma_n >= 0 and self.jitter >= 0):
            raise InvalidParametersError("sigma_n and jitter must be >= 0")

    @property
    def inv_scales(self):
        return np.array([1.0 / self.ell_s] * 3 + [1.0 / self.ell_t])


def kernel(hyper: GPHyperparams, A, B):
    """Separable squared-exponential space x time covariance between row sets."""
    s = hyper.inv_scales
    A = np.atleast_2d(A) * s
    B = np.atleast_2d(B) * s
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return hyper.sigma_f**2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def _factor(hyper, X, jitter):
    """Cholesky of K + (sigma_n^2 + jitter) I, escalating jitter x10 up to MAX_JITTER."""
    K = kernel(hyper, X, X)
    n = len(X)
    j = jitter
    while True:
        try:
            L = np.linalg.cholesky(K + (hyper.sigma_n**2 + j) * np.eye(n))
            if np.all(np.isfinite(L)):
                return L, j
        except np.linalg.LinAlgError:
            pass
        if j >= MAX_JITTER:
            raise NumericalError(f"kernel matrix not positive definite with jitter {j:g}")
        j = min(max(j, 1e-12) * 10.0, MAX_JITTER)


class GPBelief:
    """GP posterior conditioned on a bounded, oldest-first-evicted training set.

    Beliefs behave as values: ``update`` returns a new object and never
    modifies the receiver.
    """

    def __init__(self, hyper: GPHyperparams | None = None, channel: str = "reactive",
                 capacity: int = 1500, X=None, y=None, _factor_cache=None):
        if channel not in CHANNELS:
            raise InvalidParametersError(f"channel must be one of {CHANNELS}")
        if capacity < 1:
            raise InvalidParametersError("capacity must be >= 1")
        self.hyper = hyper or GPHyperparams()
        self.channel = channel
        self.capacity = int(capacity)
        self.X = np.zeros((0, 4)) if X is None else np.array(X, dtype=float).reshape(-1, 4)
        self.y = np.zeros(0) if y is None else np.array(y, dtype=float).ravel()
        if len(self.X) != len(self.y):
            raise InvalidParametersError("X and y lengths differ")
        if len(self.y) > self.capacity:
            self.X = self.X[-self.capacity:]
            self.y = self.y[-self.capacity:]
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.X)):
            raise InvalidArgumentError("training data must be finite")
        self.X.setflags(write=False)
        self.y.setflags(write=False)
        if _factor_cache is None:
            if len(self.y):
                L, j = _factor(self.hyper, self.X, self.hyper.jitter)
            else:
                L, j = np.zeros((0, 0)), self.hyper.jitter
        else:
            L, j = _factor_cache
        self.L = L
        self.jitter = j
        self.alpha = cho_solve((L, True), self.y) if len(self.y) else np.zeros(0)
        self.L.setflags(write=False)

    def __len__(self):
        return len(self.y)

    def update(self, obs) -> "GPBelief":
        return gp_update(self, obs)

    def predict(self, queries):
        return gp_predict(self, queries)

    def to_dict(self):
        return {
            "hyper": asdict(self.hyper),
            "channel": self.channel,
            "capacity": self.capacity,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(GPHyperparams(**d["hyper"]), d["channel"], d["capacity"], d["X"], d["y"])


def gp_update(b: GPBelief, obs) -> GPBelief:
    """Condition on one Observation; evicts the oldest point beyond capacity."""
    value = obs.value(b.channel)
    x_new = np.array([obs.x, obs.y, obs.z, obs.t], dtype=float)
    if not (math.isfinite(value) and np.all(np.isfinite(x_new))):
        raise InvalidArgumentError(f"non-finite {b.channel} observation")
    X = np.vstack([b.X, x_new])
    y = np.append(b.y, value)
    if len(y) > b.capacity:
        return GPBelief(b.hyper, b.channel, b.capacity, X[1:], y[1:])
    n = len(b.y)
    if n == 0:
        return GPBelief(b.hyper, b.channel, b.capacity, X, y)
    # rank-one extension of the existing factor
    k = kernel(b.hyper, b.X, x_new[None])[:, 0]
    l = solve_triangular(b.L, k, lower=True)
    d2 = b.hyper.sigma_f**2 + b.hyper.sigma_n**2 + b.jitter - l @ l
    if not d2 > 1e-14 * b.hyper.sigma_f**2:
        return GPBelief(b.hyper, b.channel, b.capacity, X, y)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = b.L
    L[n, :n] = l
    L[n, n] = math.sqrt(d2)
    return GPBelief(b.hyper, b.channel, b.capacity, X, y, _factor_cache=(L, b.jitter))


def gp_predict(b: GPBelief, queries):
    """Posterior mean and latent variance at (x, y, z, t) query rows."""
    Q = np.asarray(queries, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(Q)):
        raise InvalidArgumentError("queries must be finite")
    prior_var = b.hyper.sigma_f**2
    if len(b) == 0:
        return np.zeros(len(Q)), np.full(len(Q), prior_var)
    Kq = kernel(b.hyper, b.X, Q)
    mu = Kq.T @ b.alpha
    v = solve_triangular(b.L, Kq, lower=True)
    var = prior_var - (v * v).sum(0)
    # var > 0 contract; the floor only bites at round-off level
    var = np.maximum(var, 1e-15 * prior_var)
    return mu, var


def _gumbel_quantile_fit(mu, sigma, probs=(0.25, 0.5, 0.75), iters=200):
    """Invert prod_i Phi((z - mu_i)/sigma_i) at the given probabilities by bisection."""
    log_p = np.log(np.asarray(probs))
    lo = np.full(len(probs), mu.max() - 10.0 * sigma.max() - 1e-12)
    hi = np.full(len(probs), (mu + 10.0 * sigma).max() + 1e-12)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        logcdf = log_ndtr((mid[:, None] - mu[None, :]) / sigma[None, :]).sum(1)
        below = logcdf < log_p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def gumbel_params(mu, sigma):
    """Location and scale of the Gumbel matched to the max-value CDF quartiles."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.maximum(np.asarray(sigma, dtype=float), 1e-9)
    q25, q50, q75 = _gumbel_quantile_fit(mu, sigma)
    beta = (q75 - q25) / (math.log(-math.log(0.25)) - math.log(-math.log(0.75)))
    a = q50 + beta * math.log(-math.log(0.5))
    return a, beta


def sample_max_values(b: GPBelief, grid, M: int, rng):
    """Draw M samples of the field maximum over ``grid`` via a Gumbel fit."""
    grid = np.asarray(grid, dtype=float).reshape(-1, 4)
    if M < 1 or len(grid) == 0:
        raise InvalidArgumentError("need M >= 1 and a nonempty grid")
    mu, var = gp_predict(b, grid)
    return max_values_from_moments(mu, np.sqrt(var), M, rng)


def max_values_from_moments(mu, sigma, M, rng):
    a, beta = gumbel_params(mu, sigma)
    r = rng.random(M)
    r = np.clip(r, 1e-300, None)
    return a - beta * np.log(-np.log(r))
