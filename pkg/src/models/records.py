from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np


@dataclass
class SolveStats:
    iterations: int
    residual: float
    wall_time: float
    converged: bool = True
    history: List[float] = field(default_factory=list)  # last restart cycle


@dataclass
class FieldState:
    """Nodal fields of the coupled model at one instant"""

    c_mg: np.ndarray
    c_film: np.ndarray
    phi: np.ndarray
    time: float = 0.0

    def copy(self) -> "FieldState":
        return FieldState(
            c_mg=self.c_mg.copy(),
            c_film=self.c_film.copy(),
            phi=self.phi.copy(),
            time=self.time,
        )


@dataclass(frozen=True)
class ObservableRow:
    time_h: float
    mass_lost_g: float
    hydrogen: float
    area_mm2: float
    solid_volume_mm3: float

    HEADER = ("time_h", "mass_lost_g", "hydrogen", "area_mm2", "solid_volume_mm3")

    def as_tuple(self) -> tuple:
        return tuple(asdict(self).values())


@dataclass(frozen=True)
class TimingRecord:
    """Per-PDE wall times (s) of one time step with `workers` subdomains"""

    workers: int
    ls_pde: float
    mg_pde: float
    film_pde: float
    step: int = 0

    HEADER = ("N", "step", "ls_pde_s", "mg_pde_s", "film_pde_s", "total_s")

    @property
    def total(self) -> float:
        return self.ls_pde + self.mg_pde + self.film_pde

    def as_tuple(self) -> tuple:
        return (self.workers, self.step, self.ls_pde, self.mg_pde, self.film_pde, self.total)


@dataclass
class ScalingReport:
    records: List[TimingRecord]
    weak: bool = False
    speedups: List[float] = field(default_factory=list)
    efficiencies: List[float] = field(default_factory=list)
    superlinear: List[bool] = field(default_factory=list)
    f_amdahl: Optional[float] = None
    f_gustafson: Optional[float] = None

    @property
    def worker_counts(self) -> List[int]:
        return [r.workers for r in self.records]
