"""Experiment orchestration: configs, parallel macro-replication, metrics, CSV.

Replications are processed in fixed-size chunks whose random streams are
keyed by (seed, purpose, chunk index), so results are byte-identical for any
worker count. Within a chunk every observation is pre-drawn into a table
indexed by (replication, alternative, observation index); two policies run
on the same seed therefore see identical data wherever their sampling
decisions coincide, which pairs their comparison.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:       # Python 3.10
    import tomli as tomllib

from . import batch as batch_mod
from . import core, nn, policies, rng
from . import rollout as rollout_mod

DEFAULT_CHUNK = 4096


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to a usage exit code."""


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    total_budget: int
    n0: int
    reps: int
    policy: policies.PolicySpec
    prior: core.PriorSpec
    mode: str = "prior_draw"             # prior_draw | fixed_truth
    truth: core.GroundTruth = None       # fixed_truth only
    seed: int = 0
    workers: int = 1
    selection: str = "mean"              # mean | optimal_pcs
    selection_draws: int = 10000
    belief: str = "conjugate"            # conjugate | particle
    particles: int = 50
    systematic_resampling: bool = False
    checkpoints: tuple = ()
    chunk: int = DEFAULT_CHUNK

    def validate(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.n < 2:
            raise ConfigError("need at least two alternatives")
        if self.mode not in ("prior_draw", "fixed_truth"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed_truth" and self.truth is None:
            raise ConfigError("fixed_truth mode needs a [truth] section")
        if self.mode == "prior_draw" and not self.prior.conjugate \
                and self.belief == "conjugate":
            raise ConfigError("non-conjugate priors need the particle belief backend")
        if self.n0 * self.n > self.total_budget:
            raise ConfigError("initial stage exceeds the total budget")
        if self.belief not in ("conjugate", "particle"):
            raise ConfigError(f"unknown belief backend {self.belief!r}")
        if self.selection not in ("mean", "optimal_pcs"):
            raise ConfigError(f"unknown selection policy {self.selection!r}")
        cps = tuple(int(c) for c in self.checkpoints)
        if any(b - a <= 0 for a, b in zip(cps, cps[1:])):
            raise ConfigError("checkpoints must be strictly ascending")
        if cps and (cps[0] < self.n0 * self.n or cps[-1] > self.total_budget):
            raise ConfigError("checkpoints must lie in [n0*N, total budget]")
        if self.policy.kind == "nn":
            model = self._model()
            if model.n != self.n:
                raise ConfigError(f"model is for {model.n} alternatives, "
                                  f"experiment has {self.n}")
        return self

    def _model(self):
        if self.policy.model is not None:
            return self.policy.model
        if self.policy.model_path is None:
            raise ConfigError("nn policy needs a model or model_path")
        return nn.load_model(self.policy.model_path)

    def resolved(self):
        """Load lazy resources (saved models) so workers get them by value."""
        self.validate()
        if self.policy.kind == "nn" and self.policy.model is None:
            return replace(self, policy=replace(self.policy, model=self._model()))
        return self


@dataclass(frozen=True)
class MetricsRecord:
    checkpoints: tuple
    pcs: np.ndarray
    pcs_stderr: np.ndarray
    eoc: np.ndarray
    eoc_stderr: np.ndarray
    ratios: np.ndarray
    reps: int
    wall_time: float


def worker_count(requested):
    """Requested workers capped by the ALPHARANK_THREADS environment variable."""
    cap = os.environ.get("ALPHARANK_THREADS")
    w = max(1, int(requested))
    if cap:
        w = min(w, max(1, int(cap)))
    return w


def run_experiment(cfg):
    """Run all replications and reduce the per-chunk metrics."""
    cfg = cfg.resolved()
    t0 = time.perf_counter()
    spans = [(idx, start, min(cfg.chunk, cfg.reps - start))
             for idx, start in enumerate(range(0, cfg.reps, cfg.chunk))]
    workers = worker_count(cfg.workers)
    if workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk_star, [(cfg, s) for s in spans]))
    else:
        parts = [_run_chunk(cfg, s) for s in spans]
    cps = tuple(int(c) for c in cfg.checkpoints)
    correct = np.sum([p["correct"] for p in parts], axis=0)
    eoc_sum = np.sum([p["eoc_sum"] for p in parts], axis=0)
    eoc_sq = np.sum([p["eoc_sq"] for p in parts], axis=0)
    counts = np.sum([p["counts"] for p in parts], axis=0)
    reps = cfg.reps
    pcs = correct / reps
    pcs_se = np.sqrt(pcs * (1.0 - pcs) / reps)
    eoc = eoc_sum / reps
    eoc_var = np.maximum(eoc_sq / reps - eoc ** 2, 0.0)
    eoc_se = np.sqrt(eoc_var / reps)
    return MetricsRecord(checkpoints=cps, pcs=pcs, pcs_stderr=pcs_se, eoc=eoc,
                         eoc_stderr=eoc_se, ratios=counts / (reps * cfg.total_budget),
                         reps=reps, wall_time=time.perf_counter() - t0)


def _run_chunk_star(args):
    return _run_chunk(*args)


def _draw_truths(cfg, size, gen):
    if cfg.mode == "fixed_truth":
        return np.tile(cfg.truth.mu, (size, 1)), np.tile(cfg.truth.sigma_sq, (size, 1))
    mu = cfg.prior.sample_means(size, gen)
    for _ in range(core.MAX_TIE_RETRIES):
        tied = (mu == mu.max(axis=1, keepdims=True)).sum(axis=1) > 1
        if not tied.any():
            break
        mu[tied] = cfg.prior.sample_means(int(tied.sum()), gen)
    else:
        raise ConfigError("prior keeps producing tied best alternatives")
    sig = np.broadcast_to(cfg.prior.sigma_true_sq, mu.shape).copy()
    return mu, sig


def _make_batch(cfg, size, chunk_idx):
    if cfg.belief == "particle":
        g = rng.stream(cfg.seed, rng.PARTICLE, chunk_idx)
        return batch_mod.ParticleBatch.from_prior(cfg.prior, cfg.total_budget, size,
                                                  cfg.particles, g,
                                                  systematic=cfg.systematic_resampling), g
    return batch_mod.BeliefBatch.from_prior(cfg.prior, cfg.total_budget, size), None


def _select(cfg, belief, g_sel, best):
    if cfg.policy.kind == "oracle":
        return best
    if cfg.selection == "optimal_pcs":
        return belief.select_optimal_pcs(cfg.selection_draws, g_sel)
    return belief.select_mean()


def _run_chunk(cfg, span):
    chunk_idx, start, size = span
    truths, sig = _draw_truths(cfg, size, rng.stream(cfg.seed, rng.TRUTH, chunk_idx))
    obs = truths[:, :, None] + np.sqrt(sig)[:, :, None] * \
        rng.stream(cfg.seed, rng.OBS, chunk_idx).standard_normal(
            (size, cfg.n, cfg.total_budget))
    g_sel = rng.stream(cfg.seed, rng.SELECT, chunk_idx)
    best = np.argmax(truths, axis=1)
    cps = tuple(int(c) for c in cfg.checkpoints)
    correct = np.zeros(len(cps))
    eoc_sum = np.zeros(len(cps))
    eoc_sq = np.zeros(len(cps))
    rows = np.arange(size)

    if cfg.policy.kind == "rollout":
        counts = _run_rollout_reps(cfg, span, truths, sig, obs, best, g_sel,
                                   cps, correct, eoc_sum, eoc_sq)
        return {"correct": correct, "eoc_sum": eoc_sum, "eoc_sq": eoc_sq,
                "counts": counts}

    belief, g_pf = _make_batch(cfg, size, chunk_idx)
    sop_targets = None
    if cfg.policy.kind == "sop":
        sop_targets = (np.asarray(cfg.policy.ratios) if cfg.policy.ratios is not None
                       else policies.ratio_targets(truths, sig))

    def record(ci):
        sel = _select(cfg, belief, g_sel, best)
        hit = sel == best
        correct[ci] += hit.sum()
        gap = truths[rows, best] - truths[rows, sel]
        eoc_sum[ci] += gap.sum()
        eoc_sq[ci] += (gap * gap).sum()

    for i in range(cfg.n):
        col = np.full(size, i, dtype=np.int64)
        for k in range(cfg.n0):
            belief.observe(col, obs[rows, i, k], g_pf)
    used = cfg.n0 * cfg.n
    for ci, c in enumerate(cps):
        if c == used:
            record(ci)
    for t in range(cfg.total_budget - used):
        acts = batch_mod.next_actions(cfg.policy, belief, sop_targets=sop_targets)
        x = obs[rows, acts, belief.counts[rows, acts]]
        belief.observe(acts, x, g_pf)
        b = used + t + 1
        for ci, c in enumerate(cps):
            if c == b:
                record(ci)
    return {"correct": correct, "eoc_sum": eoc_sum, "eoc_sq": eoc_sq,
            "counts": belief.counts.sum(axis=0).astype(float)}


def _run_rollout_reps(cfg, span, truths, sig, obs, best, g_sel, cps,
                      correct, eoc_sum, eoc_sq):
    """Sequential path for the rollout policy: one replication at a time."""
    chunk_idx, start, size = span
    roll_cfg = rollout_mod.RolloutConfig(
        base=cfg.policy.base, rollouts=cfg.policy.rollouts,
        horizon=cfg.policy.horizon, selection=cfg.policy.selection,
        selection_draws=cfg.policy.selection_draws)
    counts_total = np.zeros(cfg.n)
    for r in range(size):
        if cfg.belief == "particle":
            # particle clouds independent per replication
            g_pf = rng.stream(cfg.seed, rng.PARTICLE, chunk_idx, start + r)
            belief = batch_mod.ParticleBatch.from_prior(
                cfg.prior, cfg.total_budget, 1, cfg.particles, g_pf,
                systematic=cfg.systematic_resampling)
        else:
            g_pf = None
            belief = batch_mod.BeliefBatch.from_prior(cfg.prior, cfg.total_budget, 1)
        g_roll = rng.stream(cfg.seed, rng.ROLLOUT, start + r)
        for i in range(cfg.n):
            col = np.full(1, i, dtype=np.int64)
            for k in range(cfg.n0):
                belief.observe(col, obs[r:r + 1, i, k], g_pf)
        used = cfg.n0 * cfg.n

        def record(ci):
            sel = int(_select(cfg, belief, g_sel, best[r:r + 1])[0])
            correct[ci] += sel == best[r]
            gap = truths[r, best[r]] - truths[r, sel]
            eoc_sum[ci] += gap
            eoc_sq[ci] += gap * gap

        for ci, c in enumerate(cps):
            if c == used:
                record(ci)
        for t in range(cfg.total_budget - used):
            mask, forced = batch_mod.forced_actions(belief)
            if mask is not None and mask[0]:
                a = int(forced[0])
            else:
                a = rollout_mod.rollout_next(belief, roll_cfg, g_roll)
            x = obs[r:r + 1, a, int(belief.counts[0, a])]
            belief.observe(np.full(1, a, dtype=np.int64), x, g_pf)
            b = used + t + 1
            for ci, c in enumerate(cps):
                if c == b:
                    record(ci)
        counts_total += belief.counts[0]
    return counts_total


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _fmt(x):
    return f"{x:.6g}"


def emit_csv(rec, path):
    """Write the metric curve to ``path`` and ratios to ``<stem>_ratios<ext>``.

    Curve columns: budget,pcs,pcs_stderr,eoc,eoc_stderr. Ratio columns:
    alternative,ratio. Returns both paths.
    """
    stem, ext = os.path.splitext(path)
    ratio_path = f"{stem}_ratios{ext or '.csv'}"
    with open(path, "w") as fh:
        fh.write("budget,pcs,pcs_stderr,eoc,eoc_stderr\n")
        for i, c in enumerate(rec.checkpoints):
            fh.write(",".join([str(int(c)), _fmt(rec.pcs[i]), _fmt(rec.pcs_stderr[i]),
                               _fmt(rec.eoc[i]), _fmt(rec.eoc_stderr[i])]) + "\n")
    with open(ratio_path, "w") as fh:
        fh.write("alternative,ratio\n")
        for i, r in enumerate(rec.ratios):
            fh.write(f"{i},{_fmt(r)}\n")
    return path, ratio_path


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def _as_array(value, n, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.size != n:
        raise ConfigError(f"{name} must be a scalar or a length-{n} list")
    return arr


def parse_prior(table, n):
    family = table.get("family", "normal")
    sig = table.get("sigma_true_sq", 1.0)
    if family == "normal":
        return core.PriorSpec(n=n, sigma_true_sq=_as_array(sig, n, "sigma_true_sq"),
                              mu0=_as_array(table.get("mu0", 0.0), n, "mu0"),
                              sigma0_sq=_as_array(table.get("sigma0_sq", np.inf), n,
                                                  "sigma0_sq"))
    if family == "gamma":
        return core.PriorSpec(n=n, sigma_true_sq=_as_array(sig, n, "sigma_true_sq"),
                              family=core.PriorFamily.GAMMA,
                              shape=float(table["shape"]), rate=float(table["rate"]))
    if family == "normal_binomial":
        return core.PriorSpec(n=n, sigma_true_sq=_as_array(sig, n, "sigma_true_sq"),
                              family=core.PriorFamily.NORMAL_BINOMIAL,
                              mu_nb=float(table.get("mu", 0.0)),
                              sigma_nb_sq=float(table["sigma_sq"]),
                              trials_nb=int(table["trials"]), p_nb=float(table["p"]))
    raise ConfigError(f"unknown prior family {family!r}")


def parse_policy_table(table):
    kind = table.get("kind", "ea").lower()
    kw = {}
    if kind == "rollout":
        base = table.get("base", {"kind": "ea"})
        if isinstance(base, str):
            base = {"kind": base}
        kw["base"] = parse_policy_table(base)
        kw["rollouts"] = int(table.get("rollouts", 100))
        if "horizon" in table:
            kw["horizon"] = int(table["horizon"])
        kw["selection"] = table.get("selection", "mean")
        kw["selection_draws"] = int(table.get("selection_draws", 10000))
    if kind == "nn":
        if "model" in table:
            kw["model_path"] = str(table["model"])
        if "horizon" in table:
            kw["horizon"] = int(table["horizon"])
    if kind == "ocba":
        kw["variance_source"] = table.get("variance_source", "sample")
    if kind == "sop" and "ratios" in table:
        kw["ratios"] = tuple(float(v) for v in table["ratios"])
    try:
        return policies.PolicySpec(kind=kind, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, seed=None, workers=None):
    """Parse a TOML experiment file; --seed/--workers flags override it."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    exp = doc.get("experiment", {})
    truth_tab = doc.get("truth")
    n = exp.get("n")
    if n is None:
        if truth_tab and "mu" in truth_tab:
            n = len(truth_tab["mu"])
        else:
            raise ConfigError("experiment.n is required")
    n = int(n)
    prior = parse_prior(doc.get("prior", {}), n)
    truth = None
    if truth_tab:
        truth = core.make_truth(np.asarray(truth_tab["mu"], dtype=float),
                                _as_array(truth_tab.get("sigma_sq", 1.0), n, "sigma_sq"))
    mode = exp.get("mode", "fixed_truth" if truth is not None else "prior_draw")
    try:
        cfg = ExperimentConfig(
            n=n,
            total_budget=int(exp["budget"]),
            n0=int(exp.get("n0", 0)),
            reps=int(exp.get("reps", 1)),
            policy=parse_policy_table(doc.get("policy", {})),
            prior=prior,
            mode=mode,
            truth=truth,
            seed=int(seed if seed is not None else exp.get("seed", 0)),
            workers=int(workers if workers is not None else exp.get("workers", 1)),
            selection=exp.get("selection", "mean"),
            selection_draws=int(exp.get("selection_draws", 10000)),
            belief=exp.get("belief", "conjugate"),
            particles=int(exp.get("particles", 50)),
            systematic_resampling=bool(exp.get("systematic_resampling", False)),
            checkpoints=tuple(int(c) for c in exp.get("checkpoints", [])),
            chunk=int(exp.get("chunk", DEFAULT_CHUNK)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required config key {exc}") from exc
    return cfg.validate()
