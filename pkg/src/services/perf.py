"""Per-PDE step timing, speedup/efficiency series and serial-fraction fits.

Strong scaling (fixed problem) fits Amdahl's law S = 1 / (f + (1 - f) / N);
weak scaling (problem grown with N) fits Gustafson's law S = f + (1 - f) * N
to the scaled speedup N * T(1) / T(N).
"""

import os
import statistics
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from src.models import ScalingLaw, ScalingReport, TimingRecord
from src.utils import ArgumentError, logger

FIT_XATOL = 1e-9


def amdahl_speedup(f, workers):
    workers = np.asarray(workers, dtype=np.float64)
    return 1.0 / (f + (1.0 - f) / workers)


def gustafson_speedup(f, workers):
    workers = np.asarray(workers, dtype=np.float64)
    return f + (1.0 - f) * workers


MODELS: Dict[ScalingLaw, Callable] = {
    ScalingLaw.AMDAHL: amdahl_speedup,
    ScalingLaw.GUSTAFSON: gustafson_speedup,
}


def measure_step(simulation, workers: Optional[int] = None, steps: Optional[int] = None) -> TimingRecord:
    """Median per-PDE wall time over `steps` time steps of a running simulation"""
    workers = workers or simulation.workers
    steps = steps or simulation.config.perf.measure_steps
    cpus = os.cpu_count() or 1
    if cpus < workers:
        logger.warning(f"Measuring with {workers} workers on {cpus} hardware threads")

    samples = [simulation.step() for _ in range(steps)]
    record = TimingRecord(
        workers=workers,
        ls_pde=statistics.median(s.ls_pde for s in samples),
        mg_pde=statistics.median(s.mg_pde for s in samples),
        film_pde=statistics.median(s.film_pde for s in samples),
        step=samples[-1].step,
    )
    logger.info(
        f"N={workers}: LS {record.ls_pde:.4f}s Mg {record.mg_pde:.4f}s "
        f"Film {record.film_pde:.4f}s total {record.total:.4f}s"
    )
    return record


def median_by_workers(records: Sequence[TimingRecord]) -> List[TimingRecord]:
    """One record per worker count (per-bucket median), sorted by N"""
    grouped: Dict[int, List[TimingRecord]] = {}
    for record in records:
        grouped.setdefault(record.workers, []).append(record)
    merged = []
    for workers in sorted(grouped):
        group = grouped[workers]
        if len(group) == 1:
            merged.append(group[0])
            continue
        merged.append(
            TimingRecord(
                workers=workers,
                ls_pde=statistics.median(r.ls_pde for r in group),
                mg_pde=statistics.median(r.mg_pde for r in group),
                film_pde=statistics.median(r.film_pde for r in group),
                step=max(r.step for r in group),
            )
        )
    return merged


def speedups(records: Sequence[TimingRecord], weak: bool = False) -> List[float]:
    """S(N) = T(1)/T(N), or the scaled N * T(1)/T(N) for weak scaling"""
    records = median_by_workers(records)
    baseline = next((r for r in records if r.workers == 1), None)
    if baseline is None:
        raise ArgumentError("timing records lack the N=1 baseline")
    result = []
    for r in records:
        if r.total <= 0:
            raise ArgumentError(f"non-positive total time for N={r.workers}")
        ratio = baseline.total / r.total
        result.append(r.workers * ratio if weak else ratio)
    return result


def fit_serial_fraction(workers: Sequence[int], observed: Sequence[float], law: ScalingLaw) -> float:
    """Least-squares f in [0, 1] for the given speedup law"""
    model = MODELS[ScalingLaw(law)]
    workers = np.asarray(workers, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)

    def loss(f: float) -> float:
        return float(np.sum((model(f, workers) - observed) ** 2))

    result = minimize_scalar(loss, bounds=(0.0, 1.0), method="bounded", options={"xatol": FIT_XATOL})
    candidates = [(loss(0.0), 0.0), (loss(1.0), 1.0), (loss(float(result.x)), float(result.x))]
    return min(candidates)[1]


def _check_records(records: Sequence[TimingRecord]) -> List[TimingRecord]:
    merged = median_by_workers(records)
    if len(merged) < 2:
        raise ArgumentError("fitting needs timings for at least two worker counts")
    return merged


def fit_amdahl(records: Sequence[TimingRecord]) -> float:
    merged = _check_records(records)
    return fit_serial_fraction(
        [r.workers for r in merged], speedups(merged), ScalingLaw.AMDAHL
    )


def fit_gustafson(records: Sequence[TimingRecord]) -> float:
    merged = _check_records(records)
    return fit_serial_fraction(
        [r.workers for r in merged], speedups(merged, weak=True), ScalingLaw.GUSTAFSON
    )


def build_report(records: Sequence[TimingRecord], weak: bool = False) -> ScalingReport:
    merged = median_by_workers(records)
    s = speedups(merged, weak)
    eff = [value / r.workers for value, r in zip(s, merged)]
    report = ScalingReport(
        records=merged,
        weak=weak,
        speedups=s,
        efficiencies=eff,
        superlinear=[e > 1.0 for e in eff],
    )
    if len(merged) >= 2:
        if weak:
            report.f_gustafson = fit_gustafson(merged)
        else:
            report.f_amdahl = fit_amdahl(merged)
    return report


def format_table(report: ScalingReport) -> str:
    """Plain table: one row per PDE bucket plus totals, one column per N"""
    headers = ["N"] + [str(n) for n in report.worker_counts]
    rows = [
        ["LS PDE"] + [f"{r.ls_pde:.2f}" for r in report.records],
        ["Mg PDE"] + [f"{r.mg_pde:.2f}" for r in report.records],
        ["Film PDE"] + [f"{r.film_pde:.2f}" for r in report.records],
        ["Total time (s)"] + [f"{r.total:.2f}" for r in report.records],
        ["Speedup"] + [f"{v:.2f}" for v in report.speedups],
        ["Efficiency"] + [f"{v:.2f}" for v in report.efficiencies],
    ]
    widths = [max(len(row[i]) for row in [headers] + rows) for i in range(len(headers))]

    def line(cells: List[str]) -> str:
        return "  ".join(
            cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(cells)
        )

    title = "Weak-scaling test result" if report.weak else "Strong-scaling test result"
    out = [title, line(headers), "-" * len(line(headers))]
    out += [line(row) for row in rows]
    if report.f_amdahl is not None:
        out.append(f"Amdahl serial fraction f = {report.f_amdahl:.4f}")
    if report.f_gustafson is not None:
        out.append(f"Gustafson serial fraction f = {report.f_gustafson:.4f}")
    flagged = [str(n) for n, s in zip(report.worker_counts, report.superlinear) if s]
    if flagged:
        out.append(f"Superlinear efficiency at N = {', '.join(flagged)}")
    return "\n".join(out) + "\n"
