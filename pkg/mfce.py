#!/usr/bin/env python3
"""
Rare-event probability estimation with cross-entropy importance sampling.

Usage:
    python mfce.py estimate --config config/experiments/analytic_multifidelity.json
    python mfce.py estimate --config <path> --seed 3 --out runs/try
    python mfce.py compare --configs a.json b.json c.json --out runs/cmp
    python mfce.py pod build --config config/experiments/pde_multifidelity.json --out pod/pde.bin
    python mfce.py reference --config <path> --repetitions 10 --m 20000
"""

import argparse
import json
import logging
import sys
import traceback
from datetime import datetime

from config.experiment import PDEProblemConfig, load_config
from config.settings import Settings
from core.errors import BudgetExhaustedError, ConfigError, MfceError
from db.pod_store import save_pod
from services.experiment_service import (
    ExperimentFailed,
    build_pod_for,
    build_reference,
    compare,
    output_dir_for,
    run_experiment,
)
from utils.formatting import format_level_counts, format_number, format_probability, format_seconds

EXIT_CONFIG = 1
EXIT_BUDGET = 2
EXIT_ENGINE = 3


def print_banner(title: str):
    print("=" * 80)
    print(title)
    print(f"Started at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 80)


def print_report(report):
    config = report.config
    labels = [str(d) for d in config.surrogate_levels] + ["hifi"]
    print(f"\n{'Rep':>4} {'p_hat':>12} {'J':>4} {'m':>8} {'HF evals':>10} {'Time':>10}  Iterations per level")
    print("-" * 80)
    for run in report.runs:
        j = "-" if run.J is None else str(run.J)
        print(
            f"{run.repetition:>4} {format_probability(run.p_hat):>12} {j:>4} {format_number(run.m_final):>8} "
            f"{format_number(run.hf_evals):>10} {format_seconds(run.total_wall_clock):>10}  "
            f"{format_level_counts(run.per_level_iterations, labels)}"
        )
        if run.error:
            print(f"     [FAILED] {run.error}")
    print("-" * 80)
    print(f"Mean p_hat:     {format_probability(report.mean_p_hat)}")
    print(f"Std. error:     {format_probability(report.standard_error)}")
    print(f"Reference p_A:  {format_probability(report.p_ref)}")
    if report.empirical_scv is not None:
        print(f"Empirical SCV:  {report.empirical_scv:.4g}")


def cmd_estimate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    out_dir = output_dir_for(config, args.out)

    print_banner(f"Estimate - {config.algorithm} on {config.problem.kind} ({config.repetitions} repetitions)")
    print(f"\n[1/2] Running {config.repetitions} repetition(s), seed {config.seed}...")
    try:
        report = run_experiment(config, str(out_dir))
    except ExperimentFailed as e:
        print_report(e.report)
        if e.budget_exhausted:
            print(f"\n[ERROR] Sample budget exhausted: {e} (gap {e.cause.gap:.4g}); partial report in {out_dir}")
            return EXIT_BUDGET
        print(f"\n[ERROR] {type(e.cause).__name__}: {e}; partial report in {out_dir}")
        return EXIT_ENGINE
    print_report(report)
    print(f"\n[2/2] Wrote {out_dir / 'report.json'} and {out_dir / 'runs.csv'}")
    return 0


def cmd_compare(args) -> int:
    configs = [load_config(path) for path in args.configs]
    print_banner(f"Compare - {len(configs)} configurations")
    table = compare(configs, args.out)
    print()
    print(table.to_string(index=False))
    return 0


def cmd_pod_build(args) -> int:
    config = load_config(args.config)
    if not isinstance(config.problem, PDEProblemConfig):
        raise ConfigError("problem.kind", "pod build needs a pde problem")
    if not config.surrogate_levels:
        raise ConfigError("levels", "pod build needs at least one reduced dimension")
    print_banner(f"POD build - dims {config.surrogate_levels}")
    print(f"\n[1/2] Solving {config.problem.snapshots} snapshots...")
    pod = build_pod_for(config)
    print(f"      stability floor: {pod.stability_floor:.6g}")
    print(f"      snapshot tail at d={pod.dims[-1]}: {pod.tail_bound(pod.K):.6g}")
    path = save_pod(pod, args.out)
    print(f"\n[2/2] Wrote {path}")
    return 0


def cmd_reference(args) -> int:
    config = load_config(args.config)
    print_banner(f"Reference - {args.repetitions} standard-CE runs at m={args.m}")
    p_ref = build_reference(config, args.repetitions, args.m)
    print(f"\np_ref = {p_ref:.6e}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"p_ref": p_ref, "repetitions": args.repetitions, "m": args.m}, f, indent=2)
        print(f"Wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfce",
        description="Rare-event probability estimation with multifidelity cross-entropy importance sampling",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Set MFCE_THREADS to run repetitions in parallel and MFCE_SCORE_THREADS to score PDE batches in parallel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="Run one experiment config")
    p.add_argument("--config", required=True, help="Experiment config (JSON)")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--out", help="Output directory (default: config output_dir or MFCE_OUTPUT_DIR)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", help="Run several configs on one problem and tabulate them")
    p.add_argument("--configs", nargs="+", required=True, help="Experiment configs (JSON)")
    p.add_argument("--out", help="Output directory for compare.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pod", help="Reduced-basis utilities")
    pod_sub = p.add_subparsers(dest="pod_command", required=True)
    b = pod_sub.add_parser("build", help="Precompute the POD hierarchy of a pde config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True, help="Destination POD file")
    b.set_defaults(func=cmd_pod_build)

    p = sub.add_parser("reference", help="High-budget standard-CE reference probability")
    p.add_argument("--config", required=True)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--m", type=int, default=20000)
    p.add_argument("--out", help="Write the reference to a JSON file")
    p.set_defaults(func=cmd_reference)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=Settings().MFCE_LOG_LEVEL.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"\n[ERROR] Invalid config: {e}")
        return EXIT_CONFIG
    except ExperimentFailed as e:
        print(f"\n[ERROR] {type(e.cause).__name__}: {e}")
        return EXIT_BUDGET if e.budget_exhausted else EXIT_ENGINE
    except BudgetExhaustedError as e:
        print(f"\n[ERROR] Sample budget exhausted: {e}")
        return EXIT_BUDGET
    except MfceError as e:
        print(f"\n[ERROR] {type(e).__name__}: {e}")
        traceback.print_exc()
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
