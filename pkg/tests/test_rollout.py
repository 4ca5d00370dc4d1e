import numpy as np
import pytest
from scipy.stats import binom, chi2

from alpharank import core, policies, rollout
from alpharank.rng import stream

EA = policies.PolicySpec(kind="ea")


def example_state(seed=0, n=3, total=60, n0=10, s0=0.5):
    prior = core.normal_prior(0.0, s0, 1.0, n=n)
    g = stream(60, seed)
    truth = core.sample_ground_truth(prior, g)
    return core.init_belief(prior, n0, total, truth, g), truth


class TestRolloutValue:
    def test_reward_average_is_count_over_k(self):
        state, _ = example_state()
        cfg = rollout.RolloutConfig(base=EA, rollouts=40)
        q, count = rollout.rollout_value(state, 0, cfg, stream(61))
        assert q == count / 40
        assert 0 <= count <= 40

    def test_saturated_state_scores_near_one(self):
        # one alternative ahead by >= 10 posterior standard deviations
        prior = core.normal_prior([0.0, 0.0, 5.0], 0.01, 1.0, n=3)
        state = core.empty_belief(prior, 40)
        cfg = rollout.RolloutConfig(base=EA, rollouts=100)
        for i in range(3):
            q, _ = rollout.rollout_value(state, i, cfg, stream(62, i))
            assert q >= 0.99

    def test_binomial_concentration(self):
        # oracle: fixed state and action, independent seeds: spread of q
        # obeys the binomial standard error
        state, _ = example_state(seed=3)
        cfg = rollout.RolloutConfig(base=EA, rollouts=200)
        qs = np.array([rollout.rollout_value(state, 1, cfg, stream(63, s))[0]
                       for s in range(40)])
        mean_q = qs.mean()
        se = np.sqrt(mean_q * (1 - mean_q) / 200)
        assert qs.std() < 3 * se
        assert 0.3 < mean_q < 1.0

    def test_needs_budget(self):
        state, _ = example_state()
        drained = core.BeliefState(
            counts=state.counts, sample_mean=state.sample_mean,
            sample_var=state.sample_var, post_mean=state.post_mean,
            post_var=state.post_var, remaining=0, total_budget=state.total_budget,
            prior=state.prior)
        with pytest.raises(ValueError, match="budget"):
            rollout.rollout_value(drained, 0,
                                  rollout.RolloutConfig(base=EA, rollouts=5),
                                  stream(64))


class TestRolloutNext:
    def test_argmax_and_determinism(self):
        state, _ = example_state(seed=5)
        cfg = rollout.RolloutConfig(base=EA, rollouts=50)
        a1 = rollout.rollout_next(state, cfg, stream(65))
        a2 = rollout.rollout_next(state, cfg, stream(65))
        assert a1 == a2
        assert 0 <= a1 < 3

    def test_all_equal_returns_lowest(self):
        # a fully saturated state gives q = 1 everywhere, so ties break low
        prior = core.normal_prior([5.0, 0.0, 0.0], 1e-6, 1e-6, n=3)
        state = core.empty_belief(prior, 30)
        cfg = rollout.RolloutConfig(base=EA, rollouts=30)
        assert rollout.rollout_next(state, cfg, stream(66)) == 0

    def test_no_rollout_base_nesting(self):
        spec = policies.PolicySpec(kind="rollout", base=EA)
        with pytest.raises(ValueError, match="base"):
            rollout.RolloutConfig(base=spec)

    def test_horizon_truncation_runs(self):
        state, _ = example_state()
        cfg = rollout.RolloutConfig(base=EA, rollouts=20, horizon=5)
        assert 0 <= rollout.rollout_next(state, cfg, stream(67)) < 3


class TestRewardDistribution:
    def test_rewards_are_binomial_chi_square(self):
        # under a fixed continuation PCS p, counts over K rollouts follow
        # Binomial(K, p); checked by goodness of fit at p in {.2, .5, .8}
        k = 50
        trials = 10_000
        for p in (0.2, 0.5, 0.8):
            g = stream(68, int(p * 10))
            counts = (g.random((trials, k)) < p).sum(axis=1)
            sd = np.sqrt(k * p * (1 - p))
            cuts = sorted({int(k * p - 2 * sd), int(k * p), int(k * p + 2 * sd)})
            bounds = [-1] + cuts + [k]
            observed = np.array([((counts > lo) & (counts <= hi)).sum()
                                 for lo, hi in zip(bounds[:-1], bounds[1:])])
            cdf = binom.cdf(np.asarray(bounds), k, p)
            expected = np.diff(cdf) * trials
            stat = ((observed - expected) ** 2 / expected).sum()
            assert stat < chi2.ppf(0.999, df=len(expected) - 1)

    def test_rollout_counts_match_binomial_variance(self):
        # live check on the real rollout machinery
        state, _ = example_state(seed=7)
        cfg = rollout.RolloutConfig(base=EA, rollouts=50)
        counts = np.array([rollout.rollout_value(state, 0, cfg, stream(69, s))[1]
                           for s in range(300)])
        p = counts.mean() / 50
        var_expected = 50 * p * (1 - p)
        # sample variance of a binomial: within 25% at 300 draws
        assert counts.var() == pytest.approx(var_expected, rel=0.25)


class TestImprovementBound:
    def test_degenerate_probabilities(self):
        assert rollout.improvement_bound([0.0, 1.0], 1, 17) == pytest.approx(1.0)

    def test_matches_exact_enumeration(self):
        # oracle: full 11x11 joint pmf of two independent binomials
        p = [0.5, 0.9]
        k = 10
        pr = 0.0
        for a in range(k + 1):
            for b in range(k + 1):
                if a <= b:
                    pr += binom.pmf(a, k, p[0]) * binom.pmf(b, k, p[1])
        assert rollout.improvement_bound(p, 1, k) == pytest.approx(1 - (1 - pr),
                                                                   abs=1e-12)

    def test_nondecreasing_in_k_for_separated_p(self):
        p = [0.55, 0.8, 0.3]
        values = [rollout.improvement_bound(p, 1, k) for k in (5, 10, 20, 40)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_rejects_wrong_argmax(self):
        with pytest.raises(ValueError, match="argmax"):
            rollout.improvement_bound([0.9, 0.1], 1, 5)


class TestPolicyImprovement:
    def test_beats_base_policy_on_reference_problem(self):
        # paired replications: rollout-EA vs plain EA on the same truths and
        # observation tables; one-sided 95% test on the PCS difference
        from alpharank import harness
        prior = core.normal_prior(0.0, 0.5, 1.0, n=3)
        reps = 3000
        base = dict(n=3, total_budget=60, n0=10, reps=reps, prior=prior,
                    mode="prior_draw", seed=202, workers=2,
                    checkpoints=(60,), chunk=1500)
        ea_rec = harness.run_experiment(
            harness.ExperimentConfig(policy=EA, **base))
        roll_rec = harness.run_experiment(harness.ExperimentConfig(
            policy=policies.PolicySpec(kind="rollout", base=EA, rollouts=100),
            **base))
        diff = roll_rec.pcs[-1] - ea_rec.pcs[-1]
        # conservative pairedse: treat as independent (true pairing is tighter)
        se = np.sqrt(ea_rec.pcs_stderr[-1] ** 2 + roll_rec.pcs_stderr[-1] ** 2)
        assert diff > 1.645 * se

    def test_consistency_direction(self):
        # more budget gives higher PCS on a fixed separated truth
        from alpharank import harness
        truth = core.make_truth([0.0, 0.5, 1.0], [1.0, 1.0, 1.0])
        prior = core.uninformative_prior(np.ones(3))
        pcs = {}
        for t in (50, 200):
            cfg = harness.ExperimentConfig(
                n=3, total_budget=t, n0=5, reps=1000, prior=prior,
                mode="fixed_truth", truth=truth, seed=7, workers=1,
                policy=policies.PolicySpec(kind="rollout", base=EA, rollouts=20,
                                           horizon=10),
                checkpoints=(t,), chunk=500)
            pcs[t] = harness.run_experiment(cfg).pcs[-1]
        assert pcs[200] > pcs[50]
