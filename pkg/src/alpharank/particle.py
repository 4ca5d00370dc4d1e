"""Sequential importance resampling for posterior updates under any prior.

A particle set approximates one alternative's posterior over its unknown mean
as an equally weighted cloud after each update: weight by the normal
likelihood of the new observation, then resample with replacement back to the
original size. The cloud's moments stand in for the conjugate posterior mean
and variance, so every allocation policy works unchanged.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger("alpharank")

DEFAULT_PARTICLES = 50


@dataclass(frozen=True)
class ParticleSet:
    """Weighted particles for one alternative's mean."""

    values: np.ndarray    # (P,)
    weights: np.ndarray   # (P,) nonnegative, sums to 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.shape != weights.shape or values.size < 1:
            raise ValueError("values and weights must be equal-length 1-D arrays")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self):
        return self.values.shape[0]


def init_particles(prior, i, n_p, rng):
    """Draw n_p i.i.d. particles from alternative i's prior over its mean."""
    if n_p < 1:
        raise ValueError("need at least one particle")
    draws = prior.sample_means_single(i, n_p, rng)
    return ParticleSet(values=draws, weights=np.full(n_p, 1.0 / n_p))


def pf_update(ps, x, sigma_true_sq, rng, systematic=False):
    """Weight by the likelihood of observation x, then resample to size.

    Weights that underflow to all-zero (observation in an extreme tail) fall
    back to uniform with a logged warning rather than failing the run.
    """
    logw = -0.5 * (x - ps.values) ** 2 / sigma_true_sq
    logw -= logw.max()
    w = ps.weights * np.exp(logw)
    tot = w.sum()
    if not np.isfinite(tot) or tot <= 0.0:
        log.warning("particle weights degenerate at x=%g; resetting to uniform", x)
        w = np.full(ps.size, 1.0 / ps.size)
    else:
        w = w / tot
    if systematic:
        u = (rng.random() + np.arange(ps.size)) / ps.size
    else:
        u = rng.random(ps.size)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, u, side="left"), ps.size - 1)
    return ParticleSet(values=ps.values[idx], weights=np.full(ps.size, 1.0 / ps.size))


def pf_summary(ps):
    """Weighted mean and population variance of the particle cloud."""
    mean = float(np.dot(ps.weights, ps.values))
    var = float(np.dot(ps.weights, (ps.values - mean) ** 2))
    return mean, var
