"""CSV time series written by the simulation and scaling commands.

Rows are streamed and flushed one at a time so a run aborted mid-way keeps
everything written up to the failing step. Floats are written with repr so
two identical runs produce byte-identical files.
"""

import csv
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from src.models import ObservableRow, ScalingReport, TimingRecord
from src.utils import ArgumentError

OBSERVABLES_FILE = "observables.csv"
TIMINGS_FILE = "timings.csv"
SCALING_FILE = "scaling.csv"
SCALING_HEADER = ("N", "ls_pde_s", "mg_pde_s", "film_pde_s", "total_s", "speedup", "efficiency")


def _cell(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


class SeriesWriter:
    """Append-only CSV file with a fixed header"""

    def __init__(self, path: Union[str, Path], header: Sequence[str]):
        self.path = Path(path)
        self.header = tuple(header)
        self._file = None
        self._writer = None
        self.rows = 0

    def open(self) -> "SeriesWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.header)
        self._file.flush()
        return self

    def write(self, row: Sequence) -> None:
        if self._writer is None:
            self.open()
        if len(row) != len(self.header):
            raise ArgumentError(f"{self.path.name}: row has {len(row)} cells, header has {len(self.header)}")
        self._writer.writerow([_cell(v) for v in row])
        self._file.flush()
        self.rows += 1

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None

    def __enter__(self) -> "SeriesWriter":
        return self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def observables_writer(out_dir: Union[str, Path]) -> SeriesWriter:
    return SeriesWriter(Path(out_dir) / OBSERVABLES_FILE, ObservableRow.HEADER)


def timings_writer(out_dir: Union[str, Path]) -> SeriesWriter:
    return SeriesWriter(Path(out_dir) / TIMINGS_FILE, TimingRecord.HEADER)


def read_observables(path: Union[str, Path]) -> List[ObservableRow]:
    frame = pd.read_csv(path)
    missing = set(ObservableRow.HEADER) - set(frame.columns)
    if missing:
        raise ArgumentError(f"{path}: missing columns {sorted(missing)}")
    return [
        ObservableRow(*(float(row[c]) for c in ObservableRow.HEADER))
        for row in frame.to_dict("records")
    ]


def read_timings(path: Union[str, Path]) -> List[TimingRecord]:
    """TimingRecords from a timings CSV; `step` and `total_s` are optional columns"""
    path = Path(path)
    if not path.exists():
        raise ArgumentError(f"timing file {path} does not exist")
    frame = pd.read_csv(path)
    required = {"N", "ls_pde_s", "mg_pde_s", "film_pde_s"}
    missing = required - set(frame.columns)
    if missing:
        raise ArgumentError(f"{path}: missing columns {sorted(missing)}")
    if frame.empty:
        raise ArgumentError(f"{path}: no timing rows")
    return [
        TimingRecord(
            workers=int(row["N"]),
            ls_pde=float(row["ls_pde_s"]),
            mg_pde=float(row["mg_pde_s"]),
            film_pde=float(row["film_pde_s"]),
            step=int(row.get("step", 0)),
        )
        for row in frame.to_dict("records")
    ]


def write_scaling(report: ScalingReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            (r.workers, r.ls_pde, r.mg_pde, r.film_pde, r.total, s, e)
            for r, s, e in zip(report.records, report.speedups, report.efficiencies)
        ],
        columns=SCALING_HEADER,
    )
    frame.to_csv(path, index=False, float_format="%.6g")
    return path
