"""Command-line interface.

Subcommands:
  train   run one algorithm's seeded experiment and write a metrics CSV
  plot    render learning curves from one or more metrics CSVs
  oracle  print exact feasibility and solution count for a database file
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .sched_env import count_solutions, databases_from_text, is_feasible

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsched",
        description="Meta-controller guided multi-agent scheduling experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a seeded training experiment")
    train.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    train.add_argument("--algo", choices=harness.ALGORITHMS, default=None)
    train.add_argument("--m", type=int, default=None, help="number of scheduled agents")
    train.add_argument("--B", type=int, default=None, help="number of time slots")
    train.add_argument("--N", type=int, default=None, help="number of agents in the pool")
    train.add_argument("--blocks", type=int, default=None, help="train/eval block pairs to run")
    train.add_argument("--block-size", type=int, default=None, help="episodes per block")
    train.add_argument("--seeds", type=str, default=None, help="comma-separated run seeds")
    train.add_argument("--pretrain", action="store_const", const=True, default=None,
                       help="pretrain the negotiation controllers before joint training")
    train.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    train.add_argument("--log-episodes", action="store_true",
                       help="also write a JSON-lines per-episode log")

    plot = sub.add_parser("plot", help="render learning curves from metrics CSVs")
    plot.add_argument("--inputs", type=str, required=True,
                      help="comma-separated metrics CSV paths")
    plot.add_argument("--out", type=Path, required=True, help="output file (e.g. curves.svg)")

    oracle = sub.add_parser("oracle", help="exact feasibility/count for databases")
    oracle.add_argument("--databases", type=Path, required=True,
                        help="text file, one 0/1 database line per agent")
    return parser


def _cmd_train(args) -> int:
    overrides = {
        "algo": args.algo,
        "m": args.m,
        "B": args.B,
        "N": args.N,
        "blocks": None,  # renamed below
        "seeds": args.seeds,
        "pretrain": args.pretrain,
    }
    overrides.pop("blocks")
    if args.blocks is not None:
        overrides["total_blocks"] = args.blocks
    if args.block_size is not None:
        overrides["block_size"] = args.block_size
    config = harness.load_config(args.config, overrides)

    args.out.mkdir(parents=True, exist_ok=True)
    metrics_path = args.out / f"metrics_{config.algorithm}.csv"

    episode_sink = None
    log_fh = None
    if args.log_episodes:
        log_path = args.out / f"episodes_{config.algorithm}.jsonl"
        log_fh = open(log_path, "w", encoding="utf-8")

        def episode_sink(seed, block, phase, index, spec, record):
            entry = {
                "seed": seed,
                "block": block,
                "phase": phase,
                "episode": index,
                "agent_ids": list(spec.agent_ids),
            }
            entry.update(record.to_json_dict())
            log_fh.write(json.dumps(entry) + "\n")

    try:
        rows = harness.run_experiment(config, episode_sink=episode_sink)
    finally:
        if log_fh is not None:
            log_fh.close()
    harness.write_metrics(rows, metrics_path)

    failed_seeds = sorted({r.seed for r in rows if r.phase == "failed"})
    eval_rows = [r for r in rows if r.phase == "eval"]
    best = max((r.mean_extrinsic_reward for r in eval_rows), default=0.0)
    print(f"wrote {metrics_path} ({len(rows)} rows; best eval-block reward {best:.3f})")
    if failed_seeds:
        print(f"warning: seeds {failed_seeds} diverged and were marked failed", file=sys.stderr)
        return 3
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot_curves

    paths = [Path(p.strip()) for p in args.inputs.split(",") if p.strip()]
    plot_curves(paths, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    databases = databases_from_text(args.databases.read_text(encoding="utf-8"))
    feasible = is_feasible(databases)
    print(f"feasible: {'true' if feasible else 'false'}")
    print(f"solutions: {count_solutions(databases)}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except (harness.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
