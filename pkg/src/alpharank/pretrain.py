"""Iterative offline pre-training of the value network.

Each round generates rollout-labeled states with the current incumbent as
the base policy, trains a candidate network from the incumbent's weights,
evaluates candidate and incumbent on one seed-pinned problem set, and keeps
the candidate only if its PCS is strictly higher. The incumbent therefore
never gets worse round over round.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import core, harness, nn, policies, rng
from . import rollout as rollout_mod

EVAL_SEED_STRIDE = 1 << 20


@dataclass(frozen=True)
class PretrainConfig:
    n: int
    total_budget: int
    n0: int
    rollouts: int                   # K per rollout evaluation
    horizon: int                    # H forward steps and budget clamp
    prior: core.PriorSpec
    tasks_per_round: int = 500
    eval_reps: int = 10000
    max_rounds: int = 30
    min_improvement: float = 0.0
    first_round_base: policies.PolicySpec = field(
        default_factory=lambda: policies.PolicySpec(kind="ea"))
    workers: int = 1
    selection: str = "mean"
    epochs: int = 5
    batch_size: int = 256
    lr: float = 1e-3
    reg: float = 1e-4
    hidden: tuple = nn.DEFAULT_HIDDEN

    def validate(self):
        if min(self.n, self.total_budget, self.n0 + 1, self.rollouts,
               self.horizon, self.tasks_per_round, self.eval_reps) < 1:
            raise ValueError("counts must be positive")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be >= 0")
        if self.first_round_base.kind in ("rollout", "nn"):
            raise ValueError("first round base must be a classical policy")
        if self.n0 * self.n > self.total_budget:
            raise ValueError("initial stage exceeds the budget")
        return self


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    dataset_size: int
    mean_loss: float
    candidate_pcs: float
    incumbent_pcs: float
    accepted: bool


def _episode(base, cfg, gen):
    """One rollout-policy run; returns the (input, action-value) pairs."""
    truth = core.sample_ground_truth(cfg.prior, gen)
    state = core.init_belief(cfg.prior, cfg.n0, cfg.total_budget, truth, gen)
    roll = rollout_mod.RolloutConfig(base=base, rollouts=cfg.rollouts,
                                     horizon=cfg.horizon, selection=cfg.selection)
    examples = []
    while state.remaining > 0:
        undef = state.undefined_posterior
        if undef.any():
            action = int(np.argmax(undef))
        else:
            q, _ = rollout_mod.rollout_q_values(state, roll, gen)
            examples.append(nn.TrainingExample(nn.encode_input(state, cfg.horizon), q))
            action = int(np.argmax(q))
        state = state.observe(action, core.simulate_observation(truth, action, gen))
    return examples


def _episode_span(args):
    base, cfg, seed, round_index, lo, hi = args
    out = []
    for task in range(lo, hi):
        out.extend(_episode(base, cfg, rng.stream(seed, rng.TRAIN, round_index, task)))
    return out


def generate_round_data(incumbent, cfg, seed, round_index=0):
    """Run the round's rollout episodes, parallel over tasks, ordered output."""
    cfg.validate()
    workers = harness.worker_count(cfg.workers)
    tasks = cfg.tasks_per_round
    span = max(1, tasks // (workers * 8) or 1)
    spans = [(incumbent, cfg, seed, round_index, lo, min(lo + span, tasks))
             for lo in range(0, tasks, span)]
    if workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_episode_span, spans))
    else:
        parts = [_episode_span(s) for s in spans]
    return [ex for part in parts for ex in part]


def evaluate_policy(policy, cfg, reps, seed):
    """Mean-selection evaluation on a seed-pinned problem set.

    Returns (pcs, eoc, pcs standard error). Calls with the same seed share
    truths and observation tables, so two policies compare paired.
    """
    exp = harness.ExperimentConfig(
        n=cfg.n, total_budget=cfg.total_budget, n0=cfg.n0, reps=reps,
        policy=policy, prior=cfg.prior, mode="prior_draw",
        seed=seed, workers=cfg.workers, selection=cfg.selection,
        checkpoints=(cfg.total_budget,))
    rec = harness.run_experiment(exp)
    return float(rec.pcs[-1]), float(rec.eoc[-1]), float(rec.pcs_stderr[-1])


def _fit(model, data, cfg, gen):
    """A few epochs of Adam over the round's dataset; returns mean step loss."""
    x = np.stack([ex.input for ex in data])
    q = np.stack([ex.target for ex in data])
    adam = nn.adam_init(model, lr=cfg.lr, reg=cfg.reg)
    losses = []
    for _ in range(cfg.epochs):
        order = gen.permutation(len(data))
        for lo in range(0, len(data), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            model, adam, value = nn.train_step_arrays(model, x[idx], q[idx], adam)
            losses.append(value)
    return model, float(np.mean(losses))


def run_pretraining(cfg, seed):
    """Full improvement loop; returns the incumbent model and round reports."""
    cfg.validate()
    model = nn.init_model(cfg.n, rng.stream(seed, rng.TRAIN, 0), hidden=cfg.hidden)
    eval_seed = seed + EVAL_SEED_STRIDE
    incumbent_policy = cfg.first_round_base
    incumbent_model = model
    incumbent_pcs, _, _ = evaluate_policy(incumbent_policy, cfg, cfg.eval_reps, eval_seed)
    reports = []
    for round_index in range(1, cfg.max_rounds + 1):
        data = generate_round_data(incumbent_policy, cfg, seed, round_index)
        candidate, mean_loss = _fit(incumbent_model, data, cfg,
                                    rng.stream(seed, rng.TRAIN, round_index, 1 << 30))
        cand_policy = policies.PolicySpec(kind="nn", model=candidate, horizon=cfg.horizon)
        cand_pcs, _, _ = evaluate_policy(cand_policy, cfg, cfg.eval_reps, eval_seed)
        accepted = cand_pcs > incumbent_pcs
        reports.append(RoundReport(round_index, len(data), mean_loss,
                                   cand_pcs, incumbent_pcs, accepted))
        gain = cand_pcs - incumbent_pcs if accepted else 0.0
        if accepted:
            incumbent_model = candidate
            incumbent_policy = cand_policy
            incumbent_pcs = cand_pcs
        if gain < cfg.min_improvement and cfg.min_improvement > 0:
            break
    return incumbent_model, reports


def load_pretrain_config(path, workers=None):
    """Parse a TOML pre-training file: [pretrain] settings plus a [prior]."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    pt = doc.get("pretrain", {})
    try:
        n = int(pt["n"])
        prior = harness.parse_prior(doc.get("prior", {}), n)
        base = pt.get("first_round_base", "ea")
        cfg = PretrainConfig(
            n=n,
            total_budget=int(pt["budget"]),
            n0=int(pt.get("n0", 1)),
            rollouts=int(pt.get("rollouts", 100)),
            horizon=int(pt.get("horizon", int(pt["budget"]))),
            prior=prior,
            tasks_per_round=int(pt.get("tasks_per_round", 500)),
            eval_reps=int(pt.get("eval_reps", 10000)),
            max_rounds=int(pt.get("max_rounds", 30)),
            min_improvement=float(pt.get("min_improvement", 0.0)),
            first_round_base=policies.PolicySpec(kind=str(base)),
            workers=int(workers if workers is not None else pt.get("workers", 1)),
            selection=pt.get("selection", "mean"),
            epochs=int(pt.get("epochs", 5)),
            batch_size=int(pt.get("batch_size", 256)),
            lr=float(pt.get("lr", 1e-3)),
            reg=float(pt.get("reg", 1e-4)),
            hidden=tuple(int(w) for w in pt.get("hidden", nn.DEFAULT_HIDDEN)),
        )
    except (KeyError, ValueError) as exc:
        raise harness.ConfigError(f"bad pretrain config: {exc}") from exc
    seed = int(pt.get("seed", 0))
    return cfg.validate(), seed


def report_csv(reports, path):
    with open(path, "w") as fh:
        fh.write("round,dataset_size,loss,candidate_pcs,incumbent_pcs,accepted\n")
        for r in reports:
            fh.write(f"{r.round_index},{r.dataset_size},{r.mean_loss:.6g},"
                     f"{r.candidate_pcs:.6g},{r.incumbent_pcs:.6g},{int(r.accepted)}\n")
    return path
