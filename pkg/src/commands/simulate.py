import argparse

from src.commands.base import Command
from src.commands.fit import fit_timings
from src.models import RunMode
from src.services.perf import format_table
from src.services.runconfig import parse_config, with_overrides
from src.services.simulation import run_scaling, run_simulation
from src.utils import ConfigError


def _configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration (TOML)")
    parser.add_argument("--workers", type=int, default=None, help="number of subdomain workers")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--debug-exports",
        action="store_true",
        help="also write the subdomain map (VTK) and the assembled operators (Matrix Market)",
    )


def _run(args: argparse.Namespace) -> int:
    config = with_overrides(parse_config(args.config), workers=args.workers, output_dir=args.out)
    mode = RunMode(config.mode)

    if mode == RunMode.SIMULATE:
        summary = run_simulation(config, debug_exports=args.debug_exports)
        print("\n".join(summary.lines()))
    elif mode == RunMode.FIT_ONLY:
        if not config.perf.fit_input:
            raise ConfigError("mode fit_only needs perf.fit_input", ["perf.fit_input"])
        f = fit_timings(config.perf.fit_input, config.perf.law)
        print(f"f_{config.perf.law.value} = {f:.4f}")
    else:
        report = run_scaling(
            config, config.perf.worker_counts, weak=mode == RunMode.WEAK_SCALING
        )
        print(format_table(report), end="")
    return 0


command = Command(
    name="simulate",
    help="Run the coupled degradation model (or the mode set in the config)",
    configure=_configure,
    run=_run,
)
