"""Command-line entry point: ``run``, ``bounds`` and ``compare-fl``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import runner
from .bounds import clean_json
from .errors import BoundCheckError, ConfigurationError, SgnLabError

log = logging.getLogger("sgn_lab")


def _seed(arg, cfg_seed):
    if arg is not None:
        return arg
    env = os.environ.get("SGN_LAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"SGN_LAB_SEED is not an integer: {env!r}") from None
    return cfg_seed


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--data", help="input table for the tabular scenario")
    common.add_argument("--seed", type=_u64, help="master seed (falls back to $SGN_LAB_SEED)")
    common.add_argument("--trials", type=int, help="override the number of trials")
    common.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--sweep", help="parameter sweep, e.g. N=5,50,150")
    common.add_argument("--beta-convention", choices=("proof", "statement"), default="proof",
                        help="sync rate in the bounds: beta/c (proof) or beta (statement)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sgn-lab", description="Network-regularized stochastic gradient lab")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate a scenario and write metrics")
    b = sub.add_parser("bounds", parents=[common], help="evaluate the error bounds")
    b.add_argument("--check", action="store_true", help="validate the bounds by Monte Carlo")
    sub.add_parser("compare-fl", parents=[common], help="SGN versus federated learning decision")
    return p


def _load(args) -> runner.RunConfig:
    cfg = runner.RunConfig.load(args.config)
    cfg.seed = _seed(args.seed, cfg.seed)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigurationError("--trials must be >= 1")
        cfg.trials = args.trials
    if args.sweep:
        cfg.sweep = runner.parse_sweep(args.sweep)
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    return cfg


def cmd_bounds(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem, top = runner.representative_instance(cfg)
    rep, cmp = runner.write_bounds(out / "bounds.json", problem, top, cfg, args.beta_convention)
    if rep.constants.kappa == 0:
        warnings.warn("kappa = 0: upper bounds are infinite")
    print(json.dumps(clean_json({"C1": rep.C1, "C2": rep.C2, "C3": rep.C3, "thm1_inf": rep.thm1_inf,
                                 "thm2_inf": rep.thm2_inf, "thm3_inf_lower": rep.thm3_inf_lower,
                                 "thm3_inf_upper": rep.thm3_inf_upper}), indent=2))
    if args.check:
        res = runner.bound_check(cfg, problem, top, args.beta_convention, args.workers)
        with open(out / "bounds_check.json", "w") as fh:
            json.dump(clean_json(res), fh, indent=2)
        for name, ok in res["checks"].items():
            print(f"{name}: {'PASS' if ok else 'FAIL'}")
        if not res["passed"]:
            raise BoundCheckError("Monte Carlo means violate the bounds (see bounds_check.json)")
    return 0


def cmd_compare(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem, top = runner.representative_instance(cfg)
    rep, _, _ = runner.report_for(cfg, problem, top, args.beta_convention)
    cmp = runner.auto_comparison(problem, rep, args.beta_convention)
    result = {"decision": cmp.to_dict(), "C1": rep.C1, "C2": rep.C2, "C3": rep.C3,
              "thm2_inf": rep.thm2_inf, "thm3_inf_lower": rep.thm3_inf_lower}
    cfg.engines = ["sgn", "fl"]
    sims = runner.run_engines(cfg, args.workers)
    tail = {}
    for kind, metric in (("sgn", "U"), ("fl", "F")):
        vals = np.array([s.values[metric] for s in sims[kind]])
        k = max(1, int(round(0.1 * vals.shape[1])))
        tail[metric] = float(vals[:, -k:].mean())
    result["simulated_tail"] = tail
    result["simulated_sgn_better"] = tail["U"] < tail["F"]
    with open(out / "compare_fl.json", "w") as fh:
        json.dump(clean_json(result), fh, indent=2)
    print(f"decision: {cmp.decision}; simulated tail U={tail['U']:.4g} F={tail['F']:.4g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if args.command == "run":
            summary = runner.cmd_run(cfg, args.out, args.workers, args.data, args.beta_convention)
            log.info("wrote %d cell(s) to %s", len(summary["cells"]), args.out)
            return 0
        if args.command == "bounds":
            return cmd_bounds(args, cfg)
        return cmd_compare(args, cfg)
    except SgnLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
