import argparse

from src.models import ScalingLaw
from src.services.perf import fit_amdahl, fit_gustafson
from src.storage import read_timings
from src.utils import logger
from src.commands.base import Command


def fit_timings(path, law: ScalingLaw) -> float:
    """Serial fraction fitted to a timings CSV"""
    records = read_timings(path)
    law = ScalingLaw(law)
    f = fit_amdahl(records) if law == ScalingLaw.AMDAHL else fit_gustafson(records)
    logger.info(f"Fitted {law.value} serial fraction f = {f:.6f} from {len(records)} records")
    return f


def _configure(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="timings CSV (N,step,ls_pde_s,mg_pde_s,film_pde_s,total_s)")
    parser.add_argument(
        "--law",
        choices=[law.value for law in ScalingLaw],
        default=ScalingLaw.AMDAHL.value,
        help="speedup model to fit",
    )


def _run(args: argparse.Namespace) -> int:
    f = fit_timings(args.input, ScalingLaw(args.law))
    print(f"f_{args.law} = {f:.4f}")
    return 0


command = Command(
    name="fit",
    help="Fit the Amdahl or Gustafson serial fraction to recorded timings",
    configure=_configure,
    run=_run,
)
