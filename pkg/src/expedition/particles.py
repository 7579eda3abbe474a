"""Weighted particle belief over hidden vent parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeightsError, InvalidArgumentError
from .plume import ParamPrior, VentParams, sample_params, tracer_fields


@dataclass(frozen=True)
class ParamParticleBelief:
    particles: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.particles) < 1 or len(w) != len(self.particles):
            raise InvalidArgumentError("need >= 1 particle and one weight per particle")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("weights must be finite, nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "particles", tuple(self.particles))

    def __len__(self):
        return len(self.particles)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def to_dict(self):
        return {
            "particles": [p.to_dict() for p in self.particles],
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(VentParams.from_dict(p) for p in d["particles"]), np.array(d["weights"]))


def _normalize_log(logw):
    m = np.max(logw)
    if not np.isfinite(m):
        raise DegenerateWeightsError("all particle likelihoods underflowed to zero")
    w = np.exp(logw - m)
    return w / w.sum()


def particle_init(prior: ParamPrior, K: int, rng) -> ParamParticleBelief:
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    particles = tuple(sample_params(prior, rng) for _ in range(K))
    return ParamParticleBelief(particles, np.full(K, 1.0 / K))


def log_likelihoods(pb: ParamParticleBelief, observations, sigma_sensor: float):
    """Per-particle Gaussian log-likelihood of both channels (constants dropped)."""
    if not observations:
        raise InvalidArgumentError("observations must be nonempty")
    if not sigma_sensor > 0:
        raise InvalidArgumentError("sigma_sensor must be > 0 for likelihood weighting")
    obs = np.array([(o.x, o.y, o.z, o.t, o.reactive, o.turbidity) for o in observations])
    ll = np.empty(len(pb))
    for k, theta in enumerate(pb.particles):
        r, c = tracer_fields(theta, obs[:, 0], obs[:, 1], obs[:, 2], obs[:, 3])
        resid = np.concatenate([obs[:, 4] - r, obs[:, 5] - c])
        # sorted so the sum, and hence the weights, do not depend on observation order
        with np.errstate(over="ignore"):
            ll[k] = -0.5 * np.sum(np.sort((resid / sigma_sensor) ** 2))
    return ll


def particle_reweight(pb: ParamParticleBelief, observations, sigma_sensor: float):
    """Bayes reweighting in log space.  Returns ``(new_belief, ess)``."""
    ll = log_likelihoods(pb, observations, sigma_sensor)
    with np.errstate(divide="ignore"):
        logw = np.log(pb.weights) + ll
    new = ParamParticleBelief(pb.particles, _normalize_log(logw))
    return new, new.ess


def systematic_indices(weights, u0):
    """Indices chosen by systematic resampling with offset ``u0`` in [0, 1)."""
    K = len(weights)
    cum = np.cumsum(weights)
    last = int(np.flatnonzero(np.asarray(weights) > 0)[-1])
    cum[last:] = 1.0  # zero-weight tail is never selected
    positions = (u0 + np.arange(K)) / K
    # (u0 + K - 1) / K can round up to 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), last)


def particle_resample(pb: ParamParticleBelief, rng) -> ParamParticleBelief:
    """Systematic resampling to uniform weights when ESS < K/2, else identity."""
    K = len(pb)
    if pb.ess >= K / 2:
        return pb
    idx = systematic_indices(pb.weights, rng.random())
    return ParamParticleBelief(tuple(pb.particles[i] for i in idx), np.full(K, 1.0 / K))
