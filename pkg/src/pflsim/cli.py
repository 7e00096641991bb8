"""Command-line experiment runner and accountant front end.

Subcommands:

* ``pflsim run <config.toml>``  -- train per the config and write
  history.csv, ledger.csv, summary.json and model.ckpt to the output
  directory (``--dry-run`` prints the message-size plan instead).
* ``pflsim account``            -- epsilon spent by (q, sigma, steps, delta).
* ``pflsim calibrate``          -- noise multiplier for a target epsilon.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .accountant import PrivacySpend, SgmParams, calibrate_sigma, compose_and_convert
from .config import load_config
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DomainError,
    NotPSDError,
    PflsimError,
)
from .runner import projected_plan, run_experiment

OUTPUT_ROOT_ENV = "PFLSIM_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pflsim",
        description="Desk-scale private federated learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to the TOML experiment config")
    run.add_argument("-o", "--output", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="override the experiment seed")
    run.add_argument("--jobs", type=int, help="parallel clients within a round")
    run.add_argument(
        "--dry-run",
        action="store_true",
        help="print the per-round message-size plan without training",
    )
    run.add_argument("--json", action="store_true", help="print machine-readable output")

    account = sub.add_parser("account", help="epsilon spent by an iterated SGM")
    account.add_argument("--q", type=float, required=True, help="group sampling rate")
    account.add_argument("--sigma", type=float, required=True, help="noise multiplier")
    account.add_argument("--steps", type=int, required=True, help="composition steps")
    account.add_argument("--delta", type=float, default=1e-5)
    account.add_argument("--json", action="store_true")

    calibrate = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    calibrate.add_argument("--epsilon", type=float, required=True, help="target epsilon")
    calibrate.add_argument("--delta", type=float, default=1e-5)
    calibrate.add_argument("--q", type=float, required=True)
    calibrate.add_argument("--steps", type=int, required=True)
    calibrate.add_argument("--json", action="store_true")
    return parser


def _spend_dict(spend: PrivacySpend) -> dict:
    return {"epsilon": spend.epsilon, "delta": spend.delta, "best_alpha": spend.best_alpha}


def _cmd_account(args) -> int:
    if args.q == 0.0:
        spend = PrivacySpend(epsilon=0.0, delta=args.delta, best_alpha=float("inf"))
    else:
        spend = compose_and_convert(
            SgmParams(q=args.q, sigma=args.sigma, steps=args.steps), args.delta
        )
    if args.json:
        print(json.dumps(_spend_dict(spend), sort_keys=True))
    else:
        print(
            f"epsilon = {spend.epsilon:.6g} at delta = {spend.delta:.3g} "
            f"(best alpha = {spend.best_alpha:g}, q = {args.q:g}, "
            f"sigma = {args.sigma:g}, steps = {args.steps})"
        )
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    sigma = calibrate_sigma(args.epsilon, args.delta, q=args.q, steps=args.steps)
    if args.q == 0.0:
        achieved = PrivacySpend(epsilon=0.0, delta=args.delta, best_alpha=float("inf"))
    else:
        achieved = compose_and_convert(
            SgmParams(q=args.q, sigma=sigma, steps=args.steps), args.delta
        )
    payload = {"sigma": sigma, "achieved": _spend_dict(achieved), "target_epsilon": args.epsilon}
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(
            f"sigma = {sigma:.6g} for target epsilon = {args.epsilon:g} at "
            f"delta = {args.delta:.3g} (achieves epsilon = {achieved.epsilon:.6g})"
        )
    return EXIT_OK


def _resolve_output_dir(args, cfg) -> str:
    if args.output:
        return args.output
    if cfg.output.directory:
        return cfg.output.directory
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    stem = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(root, stem)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, experiment=dataclasses.replace(cfg.experiment, seed=args.seed)
        )
    if args.jobs is not None:
        cfg = dataclasses.replace(
            cfg, experiment=dataclasses.replace(cfg.experiment, jobs=args.jobs)
        )
    cfg.validate()
    if args.dry_run:
        plan = projected_plan(cfg)
        if args.json:
            print(json.dumps(plan, sort_keys=True))
        else:
            print(
                f"message size: {plan['message_bytes']} bytes "
                f"({plan['trainable_parameters']} params x {plan['bits_per_parameter']} bits)"
            )
            for row in plan["per_round"]:
                print(f"  round {row['round']}: {row['clients']} clients, {row['bytes']} bytes")
            print(
                f"projected total: {plan['bytes_total']} bytes = "
                f"{plan['gigabytes']:.6g} GB ({plan['gb_convention']})"
            )
        return EXIT_OK
    out_dir = _resolve_output_dir(args, cfg)
    summary = run_experiment(cfg, out_dir)
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"wrote {out_dir}/{{history.csv,ledger.csv,summary.json,model.ckpt}}")
        print(
            f"final: loss {summary['final_loss']:.4f}, "
            f"accuracy {summary['final_accuracy']:.4f}, anls {summary['final_anls']:.4f}; "
            f"{summary['bytes_total']} bytes over {summary['messages']} messages"
        )
        if summary["privacy"] is not None:
            p = summary["privacy"]
            print(
                f"privacy: epsilon {p['epsilon']:.4f} at delta {p['delta']:g} "
                f"(sigma {p['noise_multiplier']:.4g}, q {p['q']:.4g}, steps {p['steps']})"
            )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "account":
            return _cmd_account(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CalibrationError, ConvergenceError, NotPSDError, DomainError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PflsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
