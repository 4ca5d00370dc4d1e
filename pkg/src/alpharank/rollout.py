"""Monte Carlo rollout policy: score each action by simulated continuations.

For each candidate alternative, K lookahead trajectories are simulated on
posterior-predictive data: a pseudo-truth is drawn from the current
posterior, the candidate is sampled once, the base policy allocates up to H
further observations, and the trajectory scores 1 if the final selection
matches the pseudo-truth's best alternative. The estimated action value is
the mean reward, and the next observation goes to the argmax.

All N actions at a step are scored against one shared panel of K
pseudo-truths, which pairs the comparison and removes the dominant noise
component from the argmax; per-action reward marginals remain i.i.d.
Bernoulli draws with the continuation PCS as success probability.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from . import batch as batch_mod
from . import core, policies


@dataclass(frozen=True)
class RolloutConfig:
    base: policies.PolicySpec
    rollouts: int = 100              # K trajectories per action
    horizon: int = None              # H forward steps; None rolls to the end
    selection: str = "mean"          # selection applied at the lookahead end
    selection_draws: int = 10000

    def __post_init__(self):
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.base.kind == "rollout":
            raise ValueError("rollout base must not itself be rollout")


def _as_row(state):
    """View a belief as a single-row lockstep batch."""
    if isinstance(state, core.BeliefState):
        return batch_mod.BeliefBatch.from_state(state, 1)
    if state.b != 1:
        raise ValueError("expected a single belief, got a batch")
    return state


def rollout_value(state, i, cfg, rng, truth_panel=None):
    """Estimated action value of sampling alternative i once.

    Returns (mean reward, correct-selection count) over K trajectories. A
    shared ``truth_panel`` may be passed so several actions are scored
    against the same pseudo-truths; by default the panel is drawn here.
    ``state`` may be a BeliefState or a single-row batch of either backend.
    """
    row = _as_row(state)
    if row.remaining < 1:
        raise ValueError("no budget left to allocate")
    k = cfg.rollouts
    truths = row.posterior_panel(k, rng) if truth_panel is None else truth_panel
    horizon = cfg.horizon if cfg.horizon is not None else row.total_budget
    h = min(horizon, row.remaining - 1)
    rows = np.arange(k)

    traj = row.tile(k, remaining=h + 1)
    sigma = np.sqrt(traj.sigma_true_sq)
    first = np.full(k, i, dtype=np.int64)
    x0 = truths[rows, first] + sigma[rows, first] * rng.standard_normal(k)
    traj.observe(first, x0, rng)
    for _ in range(h):
        acts = batch_mod.next_actions(cfg.base, traj)
        x = truths[rows, acts] + sigma[rows, acts] * rng.standard_normal(k)
        traj.observe(acts, x, rng)
    if cfg.selection == "optimal_pcs":
        sel = traj.select_optimal_pcs(cfg.selection_draws, rng)
    else:
        sel = traj.select_mean()
    count = int((sel == np.argmax(truths, axis=1)).sum())
    return count / k, count


def rollout_q_values(state, cfg, rng):
    """Action-value vector over all N alternatives from one shared panel."""
    row = _as_row(state)
    panel = row.posterior_panel(cfg.rollouts, rng)
    children = rng.spawn(row.n)
    q = np.empty(row.n)
    counts = np.empty(row.n, dtype=np.int64)
    for i in range(row.n):
        q[i], counts[i] = rollout_value(row, i, cfg, children[i], truth_panel=panel)
    return q, counts


def rollout_next(state, cfg, rng):
    """Allocate to the action with the largest estimated value."""
    q, _ = rollout_q_values(state, cfg, rng)
    return int(np.argmax(q))


def improvement_bound(p, a_star, k):
    """Lower bound on the probability the noisy argmax picks the best action.

    With R_i ~ Binomial(k, p_i) independent across actions, the chance that
    action ``a_star`` (the true argmax of p) survives every pairwise
    comparison is at least 1 - sum_i (1 - Pr(R_i <= R_a*)); the a_star term
    contributes probability one. Evaluated exactly from the binomial pmf.
    """
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if int(a_star) != int(np.argmax(p)):
        raise ValueError("a_star must be the argmax of p")
    support = np.arange(k + 1)
    pmf_star = binom.pmf(support, k, p[a_star])
    shortfall = 0.0
    for i in range(len(p)):
        if i == a_star:
            continue
        pr_le = float(np.dot(pmf_star, binom.cdf(support, k, p[i])))
        shortfall += 1.0 - pr_le
    return 1.0 - shortfall
