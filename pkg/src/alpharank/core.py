"""Problem definition, belief states, and conjugate-posterior transitions.

A ranking-and-selection problem has N alternatives with unknown means. Each
observation of alternative i is N(mu_true[i], sigma_true_sq[i]) with the
sampling variance known. Beliefs track per-alternative sample statistics and
the normal-conjugate posterior of the unknown mean; the belief plus the
remaining budget is the state of the sequential allocation problem.

All operations are pure: they take explicit random generators and return new
values. Vectorized kernels at the bottom operate on arrays of shape (..., N)
and are shared with the batched simulation engine.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

MAX_TIE_RETRIES = 100


class PriorFamily(Enum):
    NORMAL = "normal"
    GAMMA = "gamma"
    NORMAL_BINOMIAL = "normal_binomial"


@dataclass(frozen=True)
class PriorSpec:
    """Prior over true means plus the known per-alternative sampling variances.

    family NORMAL uses mu0/sigma0_sq per alternative (sigma0_sq may be +inf
    for an uninformative prior). GAMMA draws means from Gamma(shape, rate).
    NORMAL_BINOMIAL draws a normal plus an independent binomial count.
    """

    n: int
    sigma_true_sq: np.ndarray          # (N,) known sampling variances, > 0
    family: PriorFamily = PriorFamily.NORMAL
    mu0: np.ndarray = None             # (N,) NORMAL only
    sigma0_sq: np.ndarray = None       # (N,) NORMAL only, >= 0 or +inf
    shape: float = None                # GAMMA
    rate: float = None                 # GAMMA
    mu_nb: float = None                # NORMAL_BINOMIAL
    sigma_nb_sq: float = None
    trials_nb: int = None
    p_nb: float = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two alternatives")
        st = np.asarray(self.sigma_true_sq, dtype=float)
        st = np.broadcast_to(st, (self.n,)).copy()
        if not np.all(st > 0):
            raise ValueError("sampling variances must be strictly positive")
        object.__setattr__(self, "sigma_true_sq", st)
        if self.family is PriorFamily.NORMAL:
            mu0 = np.broadcast_to(np.asarray(self.mu0, dtype=float), (self.n,)).copy()
            s0 = np.broadcast_to(np.asarray(self.sigma0_sq, dtype=float), (self.n,)).copy()
            if np.any(s0 < 0):
                raise ValueError("prior variances must be >= 0")
            object.__setattr__(self, "mu0", mu0)
            object.__setattr__(self, "sigma0_sq", s0)
        elif self.family is PriorFamily.GAMMA:
            if not (self.shape > 0 and self.rate > 0):
                raise ValueError("gamma prior needs shape > 0 and rate > 0")
        elif self.family is PriorFamily.NORMAL_BINOMIAL:
            if self.sigma_nb_sq <= 0:
                raise ValueError("normal component variance must be > 0")
            if self.trials_nb < 1 or not (0.0 <= self.p_nb <= 1.0):
                raise ValueError("binomial component needs trials >= 1 and p in [0,1]")

    @property
    def conjugate(self):
        return self.family is PriorFamily.NORMAL

    def sample_means(self, size, rng):
        """Draw ``size`` i.i.d. true-mean vectors, shape (size, N)."""
        if self.family is PriorFamily.NORMAL:
            if not np.all(np.isfinite(self.sigma0_sq)):
                raise ValueError("cannot draw truths from an uninformative prior")
            return self.mu0 + np.sqrt(self.sigma0_sq) * rng.standard_normal((size, self.n))
        if self.family is PriorFamily.GAMMA:
            return rng.gamma(self.shape, 1.0 / self.rate, size=(size, self.n))
        z = self.mu_nb + np.sqrt(self.sigma_nb_sq) * rng.standard_normal((size, self.n))
        return z + rng.binomial(self.trials_nb, self.p_nb, size=(size, self.n))

    def sample_means_single(self, i, size, rng):
        """Draw ``size`` i.i.d. mean values for alternative i alone."""
        if self.family is PriorFamily.NORMAL:
            if not np.isfinite(self.sigma0_sq[i]):
                raise ValueError("cannot draw from an uninformative prior")
            return self.mu0[i] + np.sqrt(self.sigma0_sq[i]) * rng.standard_normal(size)
        if self.family is PriorFamily.GAMMA:
            return rng.gamma(self.shape, 1.0 / self.rate, size=size)
        z = self.mu_nb + np.sqrt(self.sigma_nb_sq) * rng.standard_normal(size)
        return z + rng.binomial(self.trials_nb, self.p_nb, size=size)

    def subset(self, indices):
        """Restriction of the prior to a subset of alternatives."""
        idx = np.asarray(indices, dtype=int)
        kw = dict(n=len(idx), sigma_true_sq=self.sigma_true_sq[idx], family=self.family,
                  shape=self.shape, rate=self.rate, mu_nb=self.mu_nb,
                  sigma_nb_sq=self.sigma_nb_sq, trials_nb=self.trials_nb, p_nb=self.p_nb)
        if self.family is PriorFamily.NORMAL:
            kw["mu0"] = self.mu0[idx]
            kw["sigma0_sq"] = self.sigma0_sq[idx]
        return PriorSpec(**kw)


def normal_prior(mu0, sigma0_sq, sigma_true_sq, n=None):
    """Convenience constructor for the conjugate-normal prior."""
    if n is None:
        n = max(np.size(mu0), np.size(sigma0_sq), np.size(sigma_true_sq))
    return PriorSpec(n=n, sigma_true_sq=sigma_true_sq, mu0=mu0, sigma0_sq=sigma0_sq)


def uninformative_prior(sigma_true_sq, n=None):
    if n is None:
        n = np.size(sigma_true_sq)
    return normal_prior(0.0, np.inf, sigma_true_sq, n=n)


@dataclass(frozen=True)
class GroundTruth:
    """One realized problem instance: true means and the unique best index."""

    mu: np.ndarray            # (N,)
    sigma_sq: np.ndarray      # (N,) > 0
    best: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sig = np.broadcast_to(np.asarray(self.sigma_sq, dtype=float), mu.shape).copy()
        if not np.all(sig > 0):
            raise ValueError("true sampling variances must be > 0")
        if (mu == mu.max()).sum() != 1:
            raise ValueError("tied best alternatives are not supported")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_sq", sig)
        object.__setattr__(self, "best", int(np.argmax(mu)))

    @property
    def n(self):
        return self.mu.shape[0]


def make_truth(mu, sigma_sq):
    mu = np.asarray(mu, dtype=float)
    return GroundTruth(mu=mu, sigma_sq=sigma_sq, best=int(np.argmax(mu)))


def sample_ground_truth(prior, rng):
    """Draw one truth from the prior, rejecting (measure-zero) exact ties."""
    for _ in range(MAX_TIE_RETRIES):
        mu = prior.sample_means(1, rng)[0]
        if (mu == mu.max()).sum() == 1:
            return GroundTruth(mu=mu, sigma_sq=prior.sigma_true_sq, best=int(np.argmax(mu)))
    raise ValueError("prior produced tied best alternatives on every draw; "
                     "degenerate configuration")


def simulate_observation(truth, i, rng):
    """One observation of alternative i from the true sampling distribution."""
    if not 0 <= i < truth.n:
        raise IndexError(f"alternative index {i} out of range")
    return truth.mu[i] + np.sqrt(truth.sigma_sq[i]) * rng.standard_normal()


@dataclass(frozen=True)
class AlternativeStats:
    """Per-alternative sample statistics and posterior moments.

    sample_var uses the population divisor (T, not T-1); it is zero until the
    second observation. post_mean is NaN and post_var +inf while the posterior
    is undefined (uninformative prior, zero observations).
    """

    count: int
    sample_mean: float
    sample_var: float
    post_mean: float
    post_var: float

    @property
    def posterior_defined(self):
        return np.isfinite(self.post_var)


def update_sample_stats(s, x):
    """Fold one observation into the running mean/population-variance pair."""
    t1 = s.count + 1
    mean = (s.count * s.sample_mean + x) / t1
    var = (s.count / t1) * (s.sample_var + (s.sample_mean - x) ** 2 / t1)
    return replace(s, count=t1, sample_mean=mean, sample_var=var)


def update_posterior_conjugate(s, prior_i):
    """Recompute the closed-form normal posterior from scratch.

    ``prior_i`` is the (mu0, sigma0_sq, sigma_true_sq) triple of one
    alternative. With sigma0_sq=+inf the posterior is the pure data estimate
    and is undefined (NaN mean, +inf variance) until the first observation.
    """
    mu0, s0, svar = prior_i
    pm, pv = posterior_moments(np.asarray(float(s.count)),
                               np.asarray(float(s.sample_mean)),
                               mu0, s0, svar)
    return replace(s, post_mean=float(pm), post_var=float(pv))


@dataclass(frozen=True)
class BeliefState:
    """Belief over all alternatives plus the budget counters.

    Arrays have shape (N,). ``stats`` exposes the same content as a tuple of
    AlternativeStats. States are immutable; ``observe`` returns the successor.
    """

    counts: np.ndarray
    sample_mean: np.ndarray
    sample_var: np.ndarray
    post_mean: np.ndarray
    post_var: np.ndarray
    remaining: int
    total_budget: int
    prior: PriorSpec

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def stats(self):
        return tuple(
            AlternativeStats(int(self.counts[i]), float(self.sample_mean[i]),
                             float(self.sample_var[i]), float(self.post_mean[i]),
                             float(self.post_var[i]))
            for i in range(self.n)
        )

    def alt(self, i):
        return self.stats[i]

    @property
    def undefined_posterior(self):
        """Boolean mask of alternatives whose posterior is not yet defined."""
        return ~np.isfinite(self.post_var)

    def observe(self, i, x):
        """Return the successor state after one observation of alternative i."""
        if self.remaining <= 0:
            raise ValueError("budget exhausted")
        counts = self.counts.copy()
        smean = self.sample_mean.copy()
        svar = self.sample_var.copy()
        t1 = counts[i] + 1
        svar[i] = (counts[i] / t1) * (svar[i] + (smean[i] - x) ** 2 / t1)
        smean[i] = (counts[i] * smean[i] + x) / t1
        counts[i] = t1
        pm, pv = posterior_moments(counts.astype(float), smean, self.prior.mu0,
                                   self.prior.sigma0_sq, self.prior.sigma_true_sq)
        return replace(self, counts=counts, sample_mean=smean, sample_var=svar,
                       post_mean=pm, post_var=pv, remaining=self.remaining - 1)


def empty_belief(prior, total_budget):
    """Belief with zero observations everywhere; posterior equals the prior."""
    if not prior.conjugate:
        raise ValueError("conjugate belief requires the normal prior family; "
                         "use the particle backend otherwise")
    n = prior.n
    counts = np.zeros(n, dtype=np.int64)
    zeros = np.zeros(n)
    pm, pv = posterior_moments(counts.astype(float), zeros, prior.mu0,
                               prior.sigma0_sq, prior.sigma_true_sq)
    return BeliefState(counts=counts, sample_mean=zeros, sample_var=zeros.copy(),
                       post_mean=pm, post_var=pv, remaining=total_budget,
                       total_budget=total_budget, prior=prior)


def init_belief(prior, n0, total_budget, truth, rng):
    """Equal initial stage: n0 observations of every alternative.

    remaining becomes total_budget - n0*N; raises if that would be negative.
    """
    if n0 < 0:
        raise ValueError("n0 must be >= 0")
    if n0 * prior.n > total_budget:
        raise ValueError(f"initial stage needs {n0 * prior.n} observations "
                         f"but the budget is {total_budget}")
    state = empty_belief(prior, total_budget)
    for i in range(prior.n):
        for _ in range(n0):
            state = state.observe(i, simulate_observation(truth, i, rng))
    return state


def predictive_sample(state, i, rng):
    """Draw from the posterior predictive N(post_mean, sigma_true_sq + post_var)."""
    if not np.isfinite(state.post_var[i]):
        raise ValueError(f"posterior of alternative {i} is undefined")
    var = state.prior.sigma_true_sq[i] + state.post_var[i]
    return state.post_mean[i] + np.sqrt(var) * rng.standard_normal()


def select_mean(state):
    """Final selection: largest posterior mean, ties to the lowest index."""
    if np.any(state.undefined_posterior):
        raise ValueError("selection requires every posterior to be defined")
    return int(np.argmax(state.post_mean))


def select_optimal_pcs(state, draws, rng):
    """Final selection by Monte Carlo posterior-PCS.

    Draws ``draws`` posterior samples of the mean vector, counts how often
    each alternative is the argmax, and returns the most frequent winner
    (ties to the lowest index).
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if np.any(state.undefined_posterior):
        raise ValueError("selection requires every posterior to be defined")
    z = rng.standard_normal((draws, state.n))
    sample = state.post_mean + np.sqrt(state.post_var) * z
    wins = np.bincount(np.argmax(sample, axis=1), minlength=state.n)
    return int(np.argmax(wins))


# ---------------------------------------------------------------------------
# array kernels shared with the batched engine
# ---------------------------------------------------------------------------

def stats_update_arrays(counts, sample_mean, sample_var, rows, cols, x):
    """In-place recurrence update of (rows, cols) entries with observations x.

    counts is integer (..., N); sample_mean/sample_var float (..., N).
    """
    t0 = counts[rows, cols].astype(float)
    t1 = t0 + 1.0
    m0 = sample_mean[rows, cols]
    sample_var[rows, cols] = (t0 / t1) * (sample_var[rows, cols] + (m0 - x) ** 2 / t1)
    sample_mean[rows, cols] = (t0 * m0 + x) / t1
    counts[rows, cols] += 1


def posterior_moments(counts, sample_mean, mu0, sigma0_sq, sigma_true_sq):
    """Closed-form conjugate posterior, vectorized over any leading shape.

    Handles the three prior regimes elementwise: point mass (sigma0_sq=0),
    proper (0 < sigma0_sq < inf), and uninformative (sigma0_sq=inf, posterior
    undefined until counts > 0).
    """
    counts = np.asarray(counts, dtype=float)
    point = sigma0_sq == 0
    flat = np.isinf(sigma0_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec0 = np.where(point | flat, 0.0, 1.0 / np.where(sigma0_sq == 0, 1.0, sigma0_sq))
        pv = 1.0 / (prec0 + counts / sigma_true_sq)
        pm = pv * (np.where(flat, 0.0, mu0) * prec0 + counts * sample_mean / sigma_true_sq)
    none_yet = counts == 0
    pv = np.where(none_yet, sigma0_sq * np.ones_like(pv), pv)
    pm = np.where(none_yet, mu0 * np.ones_like(pm), pm)
    pv = np.where(point, 0.0, pv)
    pm = np.where(point, mu0 * np.ones_like(pm), pm)
    undef = flat & none_yet
    pv = np.where(undef, np.inf, pv)
    pm = np.where(undef, np.nan, pm)
    return pm, pv
