"""Command-line entry point: run, aggregate, retention, verify."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from mtreplay.harness.aggregate import MOVING_AVERAGE_WINDOW, aggregate
from mtreplay.harness.config import (
    BUFFER_KINDS,
    ExperimentConfig,
    default_out_root,
    load_config_file,
)
from mtreplay.harness.runner import run_experiment
from mtreplay.harness.verify import run_all
from mtreplay.envsim import SCHEDULE_KINDS
from mtreplay.retention import (
    RetentionParams,
    age_histogram,
    cascade_ages,
    drive_buffer,
    empirical_fill_count,
    expected_fill_count,
    survival_study,
    t_hat,
    write_age_hist_csv,
    write_survival_csv,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtreplay",
        description="Multi-timescale replay experiments and retention checks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration across seeds")
    run.add_argument("--config", type=Path, help="TOML config file")
    run.add_argument("--buffer", choices=BUFFER_KINDS)
    run.add_argument("--schedule", choices=SCHEDULE_KINDS)
    run.add_argument("--steps", type=int, help="total environment steps")
    run.add_argument("--seed", type=int, action="append",
                     help="training seed; repeat for several")
    run.add_argument("--out-dir", type=Path)
    run.add_argument("--capacity", type=int, help="replay capacity")
    run.add_argument("--nb", type=int, help="number of cascade sub-buffers")
    run.add_argument("--beta", type=float, help="promotion probability")
    run.add_argument("--lambda-irm", type=float)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--hidden", type=int, help="hidden layer width")
    run.add_argument("--lr", type=float)
    run.add_argument("--gamma", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--warmup", type=int)
    run.add_argument("--eval-every", type=int, help="episodes between evals")
    run.add_argument("--sine-cycles", type=int)
    run.add_argument("--adjustment-period", type=int)
    run.add_argument("--workers", type=int, help="parallel seed workers")

    agg = sub.add_parser("aggregate", help="summarize finished run dirs")
    agg.add_argument("--runs", type=Path, nargs="+", required=True)
    agg.add_argument("--out-dir", type=Path, required=True)
    agg.add_argument("--window", type=int, default=MOVING_AVERAGE_WINDOW)

    ret = sub.add_parser("retention",
                         help="verify the cascade retention law empirically")
    ret.add_argument("--N", type=int, required=True, help="cascade capacity")
    ret.add_argument("--nb", type=int, required=True, help="sub-buffer count")
    ret.add_argument("--beta", type=float, required=True)
    ret.add_argument("--seeds", type=int, default=20, help="number of seeds")
    ret.add_argument("--pushes", type=int, default=200_000)
    ret.add_argument("--out-dir", type=Path)

    sub.add_parser("verify", help="run the property and gradient check suite")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config_file(args.config) if args.config else ExperimentConfig()
    config = config.with_overrides(
        buffer_kind=args.buffer, schedule_kind=args.schedule,
        total_steps=args.steps, seeds=tuple(args.seed) if args.seed else None,
        out_dir=str(args.out_dir) if args.out_dir else None,
        buffer_capacity=args.capacity, n_sub=args.nb, beta_mtr=args.beta,
        lambda_irm=getattr(args, "lambda_irm"), batch_size=args.batch_size,
        hidden_width=args.hidden, learning_rate=args.lr, gamma=args.gamma,
        tau=args.tau, warmup_steps=args.warmup,
        eval_every_episodes=args.eval_every, sine_cycles=args.sine_cycles,
        adjustment_period=args.adjustment_period)
    try:
        config.validate()
    except ValueError as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 2
    out = run_experiment(config, max_workers=args.workers)
    print(f"run complete: {out}")
    return 0


def _cmd_aggregate(args: argparse.Namespace) -> int:
    try:
        out = aggregate(args.runs, args.out_dir, window=args.window)
    except (ValueError, FileNotFoundError) as err:
        print(f"aggregate failed: {err}", file=sys.stderr)
        return 1
    print(f"summary written: {out}")
    return 0


def _cmd_retention(args: argparse.Namespace) -> int:
    params = RetentionParams(args.N, args.nb, args.beta)
    out_dir = args.out_dir or default_out_root() / "retention"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    analytic_fill = expected_fill_count(params)
    fills = [empirical_fill_count(params, np.random.default_rng(seed))
             for seed in range(args.seeds)]
    mean_fill = float(np.mean(fills))
    print(f"fill count: analytic {analytic_fill:.1f}, empirical mean "
          f"{mean_fill:.1f} over {args.seeds} seeds "
          f"(rel err {abs(mean_fill - analytic_fill) / analytic_fill:.3%})")

    k_max = min(5, params.n_sub)
    anchors = [t_hat(params, k) for k in range(1, k_max + 1)]
    anchors = [a for a in anchors if math.isfinite(a) and a < args.pushes]
    rows = survival_study(params, args.pushes, list(range(args.seeds)), anchors)
    print(f"survival after {args.pushes} pushes, {args.seeds} seeds:")
    print(f"{'anchor':>12} {'analytic':>10} {'empirical':>10} {'se':>10}")
    for row in rows:
        print(f"{row.anchor_t:12.1f} {row.analytic:10.5f} "
              f"{row.empirical_mean:10.5f} {row.empirical_se:10.5f}")
    write_survival_csv(out_dir / "survival.csv", rows)

    buffer = drive_buffer(params, args.pushes, np.random.default_rng(args.seeds))
    lo, hi, counts = age_histogram(cascade_ages(buffer, args.pushes))
    write_age_hist_csv(out_dir / "age_hist.csv", lo, hi, counts)
    print(f"wrote {out_dir / 'survival.csv'} and {out_dir / 'age_hist.csv'}")
    return 0


def _cmd_verify() -> int:
    results = run_all()
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "aggregate":
        return _cmd_aggregate(args)
    if args.command == "retention":
        return _cmd_retention(args)
    return _cmd_verify()


if __name__ == "__main__":
    sys.exit(main())
