"""Command-line entry point: ``cocp {run,ablate-t,theory,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .distributions import FAMILIES
from .experiment import (ConfigError, ExperimentConfig, format_summary, load_config,
                         run_ablation_T, run_experiment)


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_common(p):
    p.add_argument("--config", help="YAML or JSON experiment config")
    p.add_argument("--dataset", help="synthetic kind (normal, lognormal, exponential) or a CSV path")
    p.add_argument("--target", help="target column for CSV datasets")
    p.add_argument("--n", type=int, help="sample size for synthetic datasets")
    p.add_argument("--methods", type=_csv_list, help="comma-separated subset of oracle,split,cqr,cocp")
    p.add_argument("--alpha", type=float)
    p.add_argument("--reps", type=int, help="number of repetitions")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--fast-metrics", action="store_true",
                   help="only coverage, length and ConMAE (skip MSCE, WSC, ERT)")


def build_config(args, methods=None) -> ExperimentConfig:
    """Config file first, then command-line flags on top."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.dataset:
        if args.dataset in FAMILIES:
            changes["dataset"] = {"kind": args.dataset, "n": args.n or cfg.dataset.get("n", 20000)}
        else:
            if not args.target:
                raise ConfigError("--target is required for CSV datasets")
            changes["dataset"] = {"csv": args.dataset, "target": args.target}
    elif args.n:
        changes["dataset"] = {**cfg.dataset, "n": args.n}
    if methods is not None:
        changes["methods"] = methods
    elif args.methods:
        changes["methods"] = args.methods
    for flag, key in (("alpha", "alpha"), ("reps", "repetitions"), ("seed", "seed"), ("out", "out")):
        if getattr(args, flag) is not None:
            changes[key] = getattr(args, flag)
    if args.fast_metrics:
        changes["metrics"] = ["conmae"]
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args, methods=None) -> int:
    cfg = build_config(args, methods)
    summary, rows = run_experiment(cfg)
    print(format_summary(summary))
    failed = sum(1 for r in rows if r["status"].startswith("error"))
    if failed:
        print(f"{failed} row(s) failed; see the status column", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    if args.beta is not None:
        cfg = cfg.replace(cocp={**cfg.cocp, "beta": args.beta})
    summary, _ = run_ablation_T(cfg, args.t_values)
    print(format_summary(summary, columns=("coverage", "length", "conmae", "train_seconds"), key="T"))
    return 0


def cmd_theory(args) -> int:
    from .theory import registry

    rows = []
    for name, thunk in registry(args.families, seed=args.seed, include_trained=not args.skip_trained):
        try:
            res = thunk()
            res.name = name
            d = res.to_dict()
        except Exception as exc:
            d = {"name": name, "passed": False, "error": f"{type(exc).__name__}: {exc}"}
        rows.append(d)
        status = "PASS" if d["passed"] else "FAIL"
        detail = d.get("error") or f"value={d['value']:.6g} reference={d['reference']:.6g} tol={d['tolerance']:.3g}"
        print(f"{status} {name:45s} {detail}", flush=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=1, default=float))
    n_fail = sum(not d["passed"] for d in rows)
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    return 1 if n_fail else 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="fit and evaluate methods over repeated splits")
    _add_common(p)

    p = sub.add_parser("oracle", help="evaluate the oracle interval only (synthetic data)")
    _add_common(p)

    p = sub.add_parser("ablate-t", help="CoCP length as a function of the number of alternations")
    _add_common(p)
    p.add_argument("--t-values", type=lambda s: [int(t) for t in _csv_list(s)], default=[0, 1, 2, 3, 4, 5])
    p.add_argument("--beta", type=float)

    p = sub.add_parser("theory", help="run the numerical theory checks")
    p.add_argument("--families", type=_csv_list, default=list(FAMILIES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-trained", action="store_true", help="skip the check that trains a model")
    p.add_argument("--out", help="write the JSON report here")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "oracle":
            return cmd_run(args, methods=["oracle"])
        if args.command == "ablate-t":
            return cmd_ablate(args)
        return cmd_theory(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
