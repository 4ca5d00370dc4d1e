"""Command-line front end.

Subcommands: simulate, pretrain, dcr, sop, eval-model. Exit codes: 0 on
success, 1 on usage or configuration errors, 2 on runtime failures. The
ALPHARANK_THREADS environment variable caps worker counts everywhere.
"""

import argparse
import sys

import numpy as np

from . import core, dcr, harness, nn, policies, pretrain


def _build_parser():
    p = argparse.ArgumentParser(prog="alpharank",
                                description="Fixed-budget ranking and selection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configured experiment")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--workers", type=int)
    sim.add_argument("--out", default="curve.csv", help="curve CSV path")

    pre = sub.add_parser("pretrain", help="train a value network")
    pre.add_argument("--config", required=True)
    pre.add_argument("--out", required=True, help="model JSON path")
    pre.add_argument("--report", help="round report CSV path")
    pre.add_argument("--seed", type=int)
    pre.add_argument("--workers", type=int)

    dc = sub.add_parser("dcr", help="divide-and-conquer screening run")
    dc.add_argument("--config", required=True)
    dc.add_argument("--inner", required=True,
                    help="inner policy: ea|kg|ocba|aoap|ei|ptv|sop|nn")
    dc.add_argument("--model", help="model file for an nn inner policy")
    dc.add_argument("--m", type=int, required=True, help="group size")
    dc.add_argument("--phi", type=float, default=2.0)
    dc.add_argument("--seeded", action="store_true", help="seeded grouping")
    dc.add_argument("--reps", type=int, default=1)
    dc.add_argument("--audit", help="write the audit of the first replication here")
    dc.add_argument("--seed", type=int)
    dc.add_argument("--workers", type=int)

    sop = sub.add_parser("sop", help="print static optimal sampling ratios")
    sop.add_argument("--mu", required=True, help="comma-separated true means")
    sop.add_argument("--var", required=True, help="comma-separated true variances")

    ev = sub.add_parser("eval-model", help="evaluate a saved value network")
    ev.add_argument("--model", required=True)
    ev.add_argument("--config", required=True)
    ev.add_argument("--reps", type=int)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--workers", type=int)
    return p


def _cmd_simulate(args):
    cfg = harness.load_config(args.config, seed=args.seed, workers=args.workers)
    rec = harness.run_experiment(cfg)
    curve, ratios = harness.emit_csv(rec, args.out)
    if rec.checkpoints:
        print(f"pcs={rec.pcs[-1]:.6g} eoc={rec.eoc[-1]:.6g} "
              f"stderr={rec.pcs_stderr[-1]:.6g} reps={rec.reps}")
    print(f"wrote {curve} and {ratios}")
    return 0


def _cmd_pretrain(args):
    cfg, seed = pretrain.load_pretrain_config(args.config, workers=args.workers)
    if args.seed is not None:
        seed = args.seed
    model, reports = pretrain.run_pretraining(cfg, seed)
    nn.save_model(model, args.out)
    if args.report:
        pretrain.report_csv(reports, args.report)
    for r in reports:
        print(f"round {r.round_index}: candidate={r.candidate_pcs:.4f} "
              f"incumbent={r.incumbent_pcs:.4f} "
              f"{'accepted' if r.accepted else 'rejected'}")
    print(f"wrote {args.out}")
    return 0


def _cmd_dcr(args):
    cfg = harness.load_config(args.config, seed=args.seed, workers=args.workers)
    if cfg.mode != "fixed_truth":
        raise harness.ConfigError("dcr needs a [truth] section in the config")
    inner_kw = {}
    if args.inner == "nn":
        inner_kw["model"] = nn.load_model(args.model) if args.model else None
        if inner_kw["model"] is None:
            raise harness.ConfigError("--model is required for an nn inner policy")
    inner = policies.PolicySpec(kind=args.inner, **inner_kw)
    plan = dcr.plan_rounds(cfg.n, args.m, cfg.total_budget, args.phi,
                           seeding="seeded" if args.seeded else "random")
    if args.reps == 1:
        winner, records = dcr.dcr_run(cfg.truth, inner, plan, cfg.n0, cfg.prior,
                                      cfg.seed)
        audit = dcr.audit_text(records)
        if args.audit:
            with open(args.audit, "w") as fh:
                fh.write(audit)
        sys.stdout.write(audit)
        print(f"winner={winner} best={cfg.truth.best} slack={plan.slack}")
        return 0
    chunk = 512
    wins = 0
    first_audit = None
    for ci, lo in enumerate(range(0, args.reps, chunk)):
        size = min(chunk, args.reps - lo)
        res = dcr.screen_reps(cfg.truth, inner, plan, cfg.n0, cfg.prior,
                              (cfg.seed, ci), reps=size)
        wins += int((res.winners == cfg.truth.best).sum())
        if first_audit is None:
            first_audit = dcr.audit_text(res.records)
    if args.audit:
        with open(args.audit, "w") as fh:
            fh.write(first_audit)
    print(f"pcs={wins / args.reps:.6g} reps={args.reps} slack={plan.slack}")
    return 0


def _cmd_sop(args):
    mu = np.asarray([float(v) for v in args.mu.split(",")])
    var = np.asarray([float(v) for v in args.var.split(",")])
    if mu.size != var.size or mu.size < 2:
        raise harness.ConfigError("--mu and --var need equal length >= 2")
    ratios = policies.sop_ratios(core.make_truth(mu, var))
    print(",".join(f"{r:.6f}" for r in ratios))
    return 0


def _cmd_eval_model(args):
    model = nn.load_model(args.model)
    cfg = harness.load_config(args.config, seed=args.seed, workers=args.workers)
    spec = policies.PolicySpec(kind="nn", model=model,
                               horizon=cfg.policy.horizon)
    cfg = harness.ExperimentConfig(
        n=cfg.n, total_budget=cfg.total_budget, n0=cfg.n0,
        reps=args.reps if args.reps else cfg.reps, policy=spec, prior=cfg.prior,
        mode=cfg.mode, truth=cfg.truth, seed=cfg.seed, workers=cfg.workers,
        selection=cfg.selection, checkpoints=(cfg.total_budget,))
    rec = harness.run_experiment(cfg)
    print(f"pcs={rec.pcs[-1]:.6g} eoc={rec.eoc[-1]:.6g} "
          f"stderr={rec.pcs_stderr[-1]:.6g} reps={rec.reps}")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    handlers = {
        "simulate": _cmd_simulate,
        "pretrain": _cmd_pretrain,
        "dcr": _cmd_dcr,
        "sop": _cmd_sop,
        "eval-model": _cmd_eval_model,
    }
    try:
        return handlers[args.command](args)
    except (harness.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:   # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
