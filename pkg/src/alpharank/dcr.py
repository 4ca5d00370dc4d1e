"""Divide-and-conquer screening for large alternative counts.

The alternatives are split into groups of at most M, every group runs an
independent fixed-budget subproblem with the inner policy, winners advance,
and the process recurses until one alternative remains. Round budgets follow
the geometric schedule T_r = r/(phi*(phi-1)) * ((phi-1)/phi)^r * T; the
untruncated schedule sums exactly to T, so whatever the R kept rounds and
integer flooring leave over is reported as slack, never spent silently.

The engine advances many independent replications in lockstep; a single
audited run is the one-replication case. Group sizes within a round depend
only on the survivor count, so same-size groups across all replications form
one vectorized batch.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import batch as batch_mod
from . import core, policies, rng
from . import rollout as rollout_mod


@dataclass(frozen=True)
class DcrPlan:
    n: int
    m: int
    rounds: int
    phi: float
    total_budget: int
    raw_budgets: tuple          # formula values before rounding
    budgets: tuple              # per-round totals, divisible by the group count
    group_counts: tuple         # groups per round
    populations: tuple          # alternatives entering each round
    slack: int
    seeding: str = "random"     # random | seeded

    @property
    def group_budgets(self):
        return tuple(b // g for b, g in zip(self.budgets, self.group_counts))


def plan_rounds(n, m, total_budget, phi, seeding="random"):
    """Round count, group structure, and integer budgets for screening."""
    if n < 2 or m < 2:
        raise ValueError("need n >= 2 and group size m >= 2")
    if phi < 2:
        raise ValueError("phi must be >= 2")
    if seeding not in ("random", "seeded"):
        raise ValueError("seeding must be 'random' or 'seeded'")
    rounds = 1
    while m ** rounds < n:
        rounds += 1
    pops, groups = [], []
    pop = n
    for _ in range(rounds):
        pops.append(pop)
        groups.append(math.ceil(pop / m))
        pop = groups[-1]
    if pop != 1:
        raise ValueError("group structure failed to reduce to a single winner")
    raw, budgets = [], []
    for r in range(1, rounds + 1):
        t_r = r / (phi * (phi - 1.0)) * ((phi - 1.0) / phi) ** r * total_budget
        raw.append(t_r)
        budgets.append(int(t_r // groups[r - 1]) * groups[r - 1])
    for r, (b, p) in enumerate(zip(budgets, pops), start=1):
        if b < p:
            raise ValueError(f"round {r} budget {b} cannot give each of its "
                             f"{p} alternatives one observation")
    slack = total_budget - sum(budgets)
    return DcrPlan(n=n, m=m, rounds=rounds, phi=float(phi), total_budget=total_budget,
                   raw_budgets=tuple(raw), budgets=tuple(budgets),
                   group_counts=tuple(groups), populations=tuple(pops),
                   slack=slack, seeding=seeding)


def make_groups(survivors, m, seeding, estimates, gen):
    """Partition survivors into groups of size at most m.

    random: shuffle (by sorting uniform keys), then chunk. seeded: rank by
    the estimates (descending) and deal round-robin so top-ranked
    alternatives land in distinct groups.
    """
    survivors = list(survivors)
    if not survivors:
        raise ValueError("no survivors to group")
    n_groups = math.ceil(len(survivors) / m)
    if seeding == "seeded":
        est = np.asarray(estimates, dtype=float)
        ranked = [survivors[j] for j in np.argsort(-est, kind="stable")]
        return [ranked[g::n_groups] for g in range(n_groups)]
    order = np.argsort(gen.random(len(survivors)), kind="stable")
    shuffled = [survivors[j] for j in order]
    return [shuffled[g * m:(g + 1) * m] for g in range(n_groups)]


@dataclass(frozen=True)
class GroupRecord:
    round_index: int
    members: tuple
    budget: int
    winner: int
    winner_estimate: float


def audit_text(records):
    lines = []
    for r in records:
        members = ",".join(str(i) for i in r.members)
        lines.append(f"round={r.round_index} members={members} "
                     f"budget={r.budget} winner={r.winner}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ScreenResult:
    winners: np.ndarray          # (reps,) final winner per replication
    survival: np.ndarray         # (reps, rounds) true best selected in round r
    records: tuple               # GroupRecords of replication 0


def dcr_run(truth, inner, plan, n0, prior, seed):
    """One audited screening replication; returns (winner, group records)."""
    res = screen_reps(truth, inner, plan, n0, prior, (seed,), reps=1)
    return int(res.winners[0]), list(res.records)


def screen_reps(truth, inner, plan, n0, prior, key, reps=1):
    """Run ``reps`` lockstep screening replications.

    ``key`` is a tuple of stream-key integers; replications inside one call
    share the key, so callers wanting more replications than fit in memory
    chunk them with distinct keys.
    """
    if truth.n != plan.n:
        raise ValueError("truth does not match the plan's alternative count")
    if prior.family is not core.PriorFamily.NORMAL:
        raise ValueError("screening currently supports the normal prior family")
    _validate_inner(inner, plan, n0)
    key = tuple(int(k) for k in key)
    survivors = np.tile(np.arange(plan.n), (reps, 1))
    estimates = _prior_estimates(prior)
    if estimates is not None:
        estimates = np.tile(estimates, (reps, 1))
    survival = np.zeros((reps, plan.rounds), dtype=bool)
    records = []
    for round_index in range(1, plan.rounds + 1):
        mode = plan.seeding
        if mode == "seeded" and estimates is None:
            mode = "random"
        gen = rng.stream(*key, rng.GROUP, round_index)
        pop = survivors.shape[1]
        n_groups = plan.group_counts[round_index - 1]
        order = _group_order(pop, mode, estimates, gen, reps)
        arranged = np.take_along_axis(survivors, order, axis=1)
        if mode == "seeded":
            groups = [arranged[:, g::n_groups] for g in range(n_groups)]
        else:
            groups = [arranged[:, g * plan.m:(g + 1) * plan.m] for g in range(n_groups)]
        share = plan.group_budgets[round_index - 1]
        winners, win_est = _run_round(truth, inner, groups, share, n0, prior,
                                      key, round_index)
        for g in range(n_groups):
            records.append(GroupRecord(round_index, tuple(int(i) for i in groups[g][0]),
                                       share, int(winners[0, g]), float(win_est[0, g])))
        survival[:, round_index - 1] = (winners == truth.best).any(axis=1)
        survivors = winners
        estimates = win_est
    return ScreenResult(winners=survivors[:, 0], survival=survival,
                        records=tuple(records))


def _group_order(pop, mode, estimates, gen, reps):
    if mode == "seeded":
        return np.argsort(-estimates, axis=1, kind="stable")
    return np.argsort(gen.random((reps, pop)), axis=1, kind="stable")


def _prior_estimates(prior):
    if prior.family is core.PriorFamily.NORMAL and np.ptp(prior.mu0) > 0:
        return prior.mu0.copy()
    return None


def _round_sizes(pop, g, m, seeding):
    """Exact set of group sizes a round can produce."""
    if seeding == "seeded":
        lo, rem = divmod(pop, g)
        return {lo, lo + 1} if rem else {lo}
    if g == 1:
        return {pop}
    return {m, pop - m * (g - 1)}


def _validate_inner(inner, plan, n0):
    sizes = set()
    for pop, g in zip(plan.populations, plan.group_counts):
        sizes |= _round_sizes(pop, g, plan.m, plan.seeding)
    sizes = {s for s in sizes if s > 1}
    if inner.kind == "nn":
        model = inner.model
        if model is None:
            raise ValueError("nn inner policy needs a loaded model")
        bad = {s for s in sizes if s != model.n}
        if bad:
            raise ValueError(f"nn inner model handles {model.n} alternatives but "
                             f"groups of sizes {sorted(bad)} occur")
    for share, pop, g in zip(plan.group_budgets, plan.populations, plan.group_counts):
        largest = max(_round_sizes(pop, g, plan.m, plan.seeding))
        if inner.kind != "oracle" and share < n0 * largest:
            raise ValueError(f"group budget {share} cannot fund {n0} initial "
                             f"observations for {largest} members")


def _run_round(truth, inner, groups, share, n0, prior, key, round_index):
    """Screen every group of one round across all replications.

    groups is a list of (reps, size) member matrices. Returns (reps, n_groups)
    winner indices and their final posterior-mean estimates.
    """
    reps = groups[0].shape[0]
    n_groups = len(groups)
    winners = np.empty((reps, n_groups), dtype=np.int64)
    win_est = np.empty((reps, n_groups))
    if inner.kind == "oracle":
        for g, members in enumerate(groups):
            local = np.argmax(truth.mu[members], axis=1)
            winners[:, g] = np.take_along_axis(members, local[:, None], axis=1)[:, 0]
            win_est[:, g] = truth.mu[winners[:, g]]
        return winners, win_est
    by_size = {}
    for g, members in enumerate(groups):
        by_size.setdefault(members.shape[1], []).append(g)
    for s, idx in sorted(by_size.items()):
        if s == 1:
            for g in idx:
                winners[:, g] = groups[g][:, 0]
                win_est[:, g] = truth.mu[winners[:, g]]
            continue
        stacked = np.concatenate([groups[g] for g in idx], axis=0)   # (reps*G, s)
        sel, est = _screen_groups(truth, inner, stacked, share, n0, prior,
                                  key, round_index, s)
        rows = np.arange(stacked.shape[0])
        glob = stacked[rows, sel]
        for j, g in enumerate(idx):
            winners[:, g] = glob[j * reps:(j + 1) * reps]
            win_est[:, g] = est[j * reps:(j + 1) * reps]
    return winners, win_est


def _screen_groups(truth, inner, members, share, n0, prior, key, round_index, s):
    """Lockstep subproblems for all same-size groups, all replications."""
    b = members.shape[0]
    mu = truth.mu[members]
    sig = truth.sigma_sq[members]
    belief = batch_mod.BeliefBatch.from_prior(
        None, share, b, mu0=prior.mu0[members], sigma0_sq=prior.sigma0_sq[members],
        sigma_true_sq=prior.sigma_true_sq[members])
    gen = rng.stream(*key, rng.OBS, round_index, s)
    obs = mu[:, :, None] + np.sqrt(sig)[:, :, None] * \
        gen.standard_normal((b, s, share))
    rows = np.arange(b)
    for i in range(s):
        col = np.full(b, i, dtype=np.int64)
        for k in range(n0):
            belief.observe(col, obs[rows, i, k])
    sop_targets = policies.ratio_targets(mu, sig) if inner.kind == "sop" else None
    steps = share - n0 * s
    if inner.kind == "rollout":
        roll = rollout_mod.RolloutConfig(base=inner.base, rollouts=inner.rollouts,
                                         horizon=inner.horizon, selection=inner.selection)
        _screen_rollout(belief, roll, obs, key, round_index, s, steps)
    else:
        for _ in range(steps):
            acts = batch_mod.next_actions(inner, belief, sop_targets=sop_targets)
            belief.observe(acts, obs[rows, acts, belief.counts[rows, acts]])
    sel = belief.select_mean()
    return sel, belief.post_mean[rows, sel]


def _screen_rollout(belief, roll, obs, key, round_index, s, steps):
    for g in range(belief.b):
        row = batch_mod.BeliefBatch(
            belief.counts[g:g + 1], belief.sample_mean[g:g + 1],
            belief.sample_var[g:g + 1], belief.post_mean[g:g + 1],
            belief.post_var[g:g + 1], belief.remaining, belief.total_budget,
            belief.mu0[g:g + 1], belief.sigma0_sq[g:g + 1],
            belief.sigma_true_sq[g:g + 1])
        gen = rng.stream(*key, rng.ROLLOUT, round_index, s, g)
        for _ in range(steps):
            mask, forced = batch_mod.forced_actions(row)
            if mask is not None and mask[0]:
                a = int(forced[0])
            else:
                a = rollout_mod.rollout_next(row, roll, gen)
            x = obs[g:g + 1, a, int(row.counts[0, a])]
            row.observe(np.full(1, a, dtype=np.int64), x)
