import argparse

from src.commands.base import Command, worker_list
from src.services.perf import format_table
from src.services.runconfig import parse_config
from src.services.simulation import run_scaling


def _configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", choices=["strong", "weak"], default="strong")
    parser.add_argument("--config", required=True, help="run configuration (TOML)")
    parser.add_argument("--workers", type=worker_list, default=None, help="comma-separated worker counts")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--steps", type=int, default=None, help="time steps measured per worker count")


def _run(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    counts = args.workers or config.perf.worker_counts
    report = run_scaling(config, counts, weak=args.mode == "weak", out_dir=args.out, steps=args.steps)
    print(format_table(report), end="")
    return 0


command = Command(
    name="scaling",
    help="Strong- or weak-scaling timing study",
    configure=_configure,
    run=_run,
)
