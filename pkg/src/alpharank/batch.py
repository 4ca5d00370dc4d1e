"""Lockstep simulation engine: B independent problems advanced one step at a time.

All rows share the problem shape (N alternatives, budget counters) but carry
their own statistics, so classical policies evaluate as (B, N) array kernels.
The engine backs the experiment harness, the rollout trajectories, and the
screening rounds; mutation is in place for speed, unlike the pure
single-state API in core.
"""

import numpy as np

from . import core, policies


class BeliefBatch:
    """Conjugate-normal beliefs for B lockstep problems."""

    def __init__(self, counts, sample_mean, sample_var, post_mean, post_var,
                 remaining, total_budget, mu0, sigma0_sq, sigma_true_sq):
        self.counts = counts
        self.sample_mean = sample_mean
        self.sample_var = sample_var
        self.post_mean = post_mean
        self.post_var = post_var
        self.remaining = remaining
        self.total_budget = total_budget
        self.mu0 = mu0                      # (B, N) views
        self.sigma0_sq = sigma0_sq
        self.sigma_true_sq = sigma_true_sq
        # point-mass priors need the general update; otherwise the posterior
        # at touched entries (count >= 1) reduces to two array expressions
        self._fast = not bool(np.any(sigma0_sq == 0))
        if self._fast:
            with np.errstate(divide="ignore"):
                self._prec0 = np.where(np.isinf(sigma0_sq), 0.0, 1.0 / sigma0_sq)
        self._maybe_undef = bool(np.any(np.isinf(sigma0_sq) & (counts == 0)))

    @property
    def b(self):
        return self.counts.shape[0]

    @property
    def n(self):
        return self.counts.shape[1]

    @classmethod
    def from_prior(cls, prior, total_budget, batch, mu0=None, sigma0_sq=None,
                   sigma_true_sq=None):
        """Zero-observation beliefs; per-row prior arrays may override the spec's."""
        n = prior.n if prior is not None else mu0.shape[1]
        mu0 = _rows(mu0 if mu0 is not None else prior.mu0, batch, n)
        s0 = _rows(sigma0_sq if sigma0_sq is not None else prior.sigma0_sq, batch, n)
        st = _rows(sigma_true_sq if sigma_true_sq is not None else prior.sigma_true_sq, batch, n)
        counts = np.zeros((batch, n), dtype=np.int64)
        zeros = np.zeros((batch, n))
        pm, pv = core.posterior_moments(counts, zeros, mu0, s0, st)
        return cls(counts, zeros.copy(), zeros.copy(), pm, pv,
                   remaining=total_budget, total_budget=total_budget,
                   mu0=mu0, sigma0_sq=s0, sigma_true_sq=st)

    @classmethod
    def from_state(cls, state, batch, remaining=None):
        """Tile one BeliefState into B identical rows."""
        rep = lambda a: np.tile(np.asarray(a), (batch, 1))
        return cls(rep(state.counts), rep(state.sample_mean), rep(state.sample_var),
                   rep(state.post_mean), rep(state.post_var),
                   remaining=state.remaining if remaining is None else remaining,
                   total_budget=state.total_budget,
                   mu0=_rows(state.prior.mu0, batch, state.n),
                   sigma0_sq=_rows(state.prior.sigma0_sq, batch, state.n),
                   sigma_true_sq=_rows(state.prior.sigma_true_sq, batch, state.n))

    def observe(self, actions, x, rng=None):
        """Fold one observation per row into the selected alternative."""
        rows = np.arange(self.b)
        core.stats_update_arrays(self.counts, self.sample_mean, self.sample_var,
                                 rows, actions, x)
        cnt = self.counts[rows, actions]
        if self._fast:
            st = self.sigma_true_sq[rows, actions]
            prec0 = self._prec0[rows, actions]
            pv = 1.0 / (prec0 + cnt / st)
            pm = pv * (self.mu0[rows, actions] * prec0 +
                       cnt * self.sample_mean[rows, actions] / st)
        else:
            pm, pv = core.posterior_moments(
                cnt, self.sample_mean[rows, actions],
                self.mu0[rows, actions], self.sigma0_sq[rows, actions],
                self.sigma_true_sq[rows, actions])
        self.post_mean[rows, actions] = pm
        self.post_var[rows, actions] = pv
        self.remaining -= 1
        if self._maybe_undef:
            self._maybe_undef = bool(np.any(np.isinf(self.sigma0_sq)
                                            & (self.counts == 0)))

    def tile(self, k, remaining=None):
        """Replicate a single-row batch into k lockstep rows."""
        assert self.b == 1
        rep = lambda a: np.repeat(a, k, axis=0)
        return BeliefBatch(rep(self.counts), rep(self.sample_mean), rep(self.sample_var),
                           rep(self.post_mean), rep(self.post_var),
                           remaining=self.remaining if remaining is None else remaining,
                           total_budget=self.total_budget,
                           mu0=_rows(self.mu0[0], k, self.n),
                           sigma0_sq=_rows(self.sigma0_sq[0], k, self.n),
                           sigma_true_sq=_rows(self.sigma_true_sq[0], k, self.n))

    def posterior_draw(self, rng):
        """One mean-vector draw per row from the current posteriors."""
        if np.any(~np.isfinite(self.post_var)):
            raise ValueError("posterior draw requires defined posteriors")
        return self.post_mean + np.sqrt(self.post_var) * rng.standard_normal(self.counts.shape)

    def posterior_panel(self, k, rng):
        """k posterior mean-vector draws from a single-row batch, shape (k, N)."""
        assert self.b == 1
        if np.any(~np.isfinite(self.post_var[0])):
            raise ValueError("posterior draw requires defined posteriors")
        z = rng.standard_normal((k, self.n))
        return self.post_mean[0] + np.sqrt(self.post_var[0]) * z

    def select_mean(self):
        return np.argmax(self.post_mean, axis=1)

    def select_optimal_pcs(self, draws, rng):
        winners = np.empty(self.b, dtype=np.int64)
        step = max(1, int(2e7) // max(draws, 1))
        for lo in range(0, self.b, step):
            hi = min(lo + step, self.b)
            z = rng.standard_normal((hi - lo, draws, self.n))
            sample = self.post_mean[lo:hi, None, :] + np.sqrt(self.post_var[lo:hi, None, :]) * z
            idx = np.argmax(sample, axis=2)
            counts = np.apply_along_axis(np.bincount, 1, idx, minlength=self.n)
            winners[lo:hi] = np.argmax(counts, axis=1)
        return winners


class ParticleBatch:
    """Particle-filter beliefs (one cloud per alternative) for B lockstep problems."""

    def __init__(self, particles, counts, sample_mean, sample_var, remaining,
                 total_budget, sigma_true_sq, systematic=False):
        self.particles = particles          # (B, N, P)
        self.counts = counts
        self.sample_mean = sample_mean
        self.sample_var = sample_var
        self.remaining = remaining
        self.total_budget = total_budget
        self.sigma_true_sq = sigma_true_sq  # (B, N)
        self.systematic = systematic
        self.post_mean = particles.mean(axis=2)
        self.post_var = particles.var(axis=2)
        self._maybe_undef = False           # particle posteriors always defined

    @property
    def b(self):
        return self.counts.shape[0]

    @property
    def n(self):
        return self.counts.shape[1]

    @classmethod
    def from_prior(cls, prior, total_budget, batch, n_particles, rng, systematic=False):
        clouds = np.empty((batch, prior.n, n_particles))
        for j in range(n_particles):
            clouds[:, :, j] = prior.sample_means(batch, rng)
        counts = np.zeros((batch, prior.n), dtype=np.int64)
        zeros = np.zeros((batch, prior.n))
        return cls(clouds, counts, zeros, zeros.copy(), total_budget, total_budget,
                   _rows(prior.sigma_true_sq, batch, prior.n), systematic=systematic)

    def observe(self, actions, x, rng):
        rows = np.arange(self.b)
        core.stats_update_arrays(self.counts, self.sample_mean, self.sample_var,
                                 rows, actions, x)
        cloud = self.particles[rows, actions, :]            # (B, P)
        var = self.sigma_true_sq[rows, actions][:, None]
        logw = -0.5 * (x[:, None] - cloud) ** 2 / var
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        tot = w.sum(axis=1, keepdims=True)
        dead = ~np.isfinite(tot[:, 0]) | (tot[:, 0] <= 0)
        if dead.any():
            import logging
            logging.getLogger("alpharank").warning(
                "particle weights degenerate on %d rows; resetting to uniform", dead.sum())
            w[dead] = 1.0
            tot = w.sum(axis=1, keepdims=True)
        w /= tot
        idx = _resample_indices(w, rng, self.systematic)
        new_cloud = np.take_along_axis(cloud, idx, axis=1)
        self.particles[rows, actions, :] = new_cloud
        self.post_mean[rows, actions] = new_cloud.mean(axis=1)
        self.post_var[rows, actions] = new_cloud.var(axis=1)
        self.remaining -= 1

    def tile(self, k, remaining=None):
        """Replicate a single-row batch into k lockstep rows."""
        assert self.b == 1
        rep = lambda a: np.repeat(a, k, axis=0)
        return ParticleBatch(rep(self.particles), rep(self.counts), rep(self.sample_mean),
                             rep(self.sample_var),
                             remaining=self.remaining if remaining is None else remaining,
                             total_budget=self.total_budget,
                             sigma_true_sq=_rows(self.sigma_true_sq[0], k, self.n),
                             systematic=self.systematic)

    def posterior_draw(self, rng):
        b, n, p = self.particles.shape
        idx = rng.integers(0, p, size=(b, n))
        return np.take_along_axis(self.particles, idx[:, :, None], axis=2)[:, :, 0]

    def posterior_panel(self, k, rng):
        """k particle draws per alternative from a single-row batch, shape (k, N)."""
        assert self.b == 1
        n, p = self.particles.shape[1:]
        idx = rng.integers(0, p, size=(k, n))
        return self.particles[0][np.arange(n)[None, :], idx]

    def select_mean(self):
        return np.argmax(self.post_mean, axis=1)

    def select_optimal_pcs(self, draws, rng):
        b, n, p = self.particles.shape
        winners = np.empty(b, dtype=np.int64)
        step = max(1, int(2e7) // max(draws, 1))
        for lo in range(0, b, step):
            hi = min(lo + step, b)
            idx = rng.integers(0, p, size=(hi - lo, draws, n))
            sample = np.take_along_axis(self.particles[lo:hi], idx, axis=2)
            arg = np.argmax(np.swapaxes(sample, 1, 2), axis=2)
            counts = np.apply_along_axis(np.bincount, 1, arg, minlength=n)
            winners[lo:hi] = np.argmax(counts, axis=1)
        return winners


def _rows(arr, batch, n):
    """Broadcast an (N,) or (B, N) array to a read-only (B, N) view."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        return np.broadcast_to(a, (batch, n))
    return a


def _resample_indices(w, rng, systematic):
    """Resample particle indices per row from weight matrix (B, P)."""
    b, p = w.shape
    cdf = np.cumsum(w, axis=1)
    cdf[:, -1] = 1.0
    if systematic:
        u = (rng.random((b, 1)) + np.arange(p)) / p
    else:
        u = rng.random((b, p))
    # rows are searched jointly by shifting each row's cdf into its own unit slot
    rows = np.arange(b)[:, None].astype(float)
    flat_idx = np.searchsorted((cdf + rows).ravel(), (u + rows).ravel(), side="left")
    idx = flat_idx.reshape(b, p) - np.arange(b)[:, None] * p
    return np.clip(idx, 0, p - 1)


def forced_actions(batch):
    """Rows with undefined posteriors must sample their lowest such index."""
    if not getattr(batch, "_maybe_undef", True):
        return None, None
    undef = ~np.isfinite(batch.post_var)
    need = undef.any(axis=1)
    if not need.any():
        return None, None
    return need, np.argmax(undef, axis=1)


def next_actions(spec, batch, sop_targets=None):
    """Vectorized allocation decisions for every row of a batch.

    Rollout policies are per-state by construction and are rejected here;
    the harness runs them through the sequential path.
    """
    kind = spec.kind
    if kind in ("ea", "oracle"):
        acts = (batch.counts.sum(axis=1) % batch.n).astype(np.int64)
    elif kind == "kg":
        scores = policies.kg_scores(batch.post_mean, batch.post_var, batch.sigma_true_sq)
        acts = np.argmax(scores, axis=1)
        flat = ~np.any(scores > 0, axis=1)
        if flat.any():
            acts[flat] = batch.counts.sum(axis=1)[flat] % batch.n
    elif kind == "ei":
        scores = policies.ei_scores(batch.post_mean, batch.post_var)
        acts = np.argmax(scores, axis=1)
        flat = ~np.any(batch.post_var > 0, axis=1)
        if flat.any():
            acts[flat] = batch.counts.sum(axis=1)[flat] % batch.n
    elif kind == "aoap":
        acts = np.argmax(policies.aoap_values(batch.post_mean, batch.post_var,
                                              batch.sigma_true_sq), axis=1)
    elif kind == "ptv":
        acts = policies.most_starving(policies.ptv_targets(batch.sample_var), batch.counts)
    elif kind == "ocba":
        if spec.variance_source == "known":
            v = np.asarray(batch.sigma_true_sq)
        else:
            v = np.maximum(batch.sample_var, policies.VAR_FLOOR)
        targets = policies.ratio_targets(batch.post_mean, v)
        acts = policies.most_starving(targets, batch.counts)
        flat = np.all(batch.post_mean == batch.post_mean[:, [0]], axis=1)
        if flat.any():
            acts[flat] = batch.counts.sum(axis=1)[flat] % batch.n
    elif kind == "sop":
        targets = sop_targets if sop_targets is not None else np.asarray(spec.ratios)
        acts = policies.most_starving(targets, batch.counts)
    elif kind == "nn":
        from . import nn
        h = spec.horizon if spec.horizon is not None else batch.total_budget
        values = nn.forward(spec.model, nn.encode_batch(batch, h))
        acts = np.argmax(values, axis=1)
    else:
        raise ValueError(f"policy kind {kind!r} has no batched form")
    mask, forced = forced_actions(batch)
    if mask is not None:
        acts = np.where(mask, forced, acts)
    return acts.astype(np.int64)
