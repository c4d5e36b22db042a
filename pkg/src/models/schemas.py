import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Vec3 = Tuple[float, float, float]


class PrimitiveKind(str, Enum):
    BOX = "box"
    SPHERE = "sphere"


class SolverMethod(str, Enum):
    GMRES = "gmres"


class PreconditionerKind(str, Enum):
    NONE = "none"
    JACOBI = "jacobi"
    RAS = "ras"


class LocalSolverKind(str, Enum):
    DENSE_LU = "dense_lu"
    ILU0 = "ilu0"
    SPARSE_LU = "sparse_lu"


class RunMode(str, Enum):
    SIMULATE = "simulate"
    STRONG_SCALING = "strong_scaling"
    WEAK_SCALING = "weak_scaling"
    FIT_ONLY = "fit_only"


class ScalingLaw(str, Enum):
    AMDAHL = "amdahl"
    GUSTAFSON = "gustafson"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)


class GeometryPrimitive(StrictModel):
    """Axis-aligned box (center + extents) or sphere (center + radius), in mm"""

    kind: PrimitiveKind
    center: Vec3 = (0.0, 0.0, 0.0)
    extents: Optional[Vec3] = None
    radius: Optional[float] = None

    @model_validator(mode="after")
    def validate_shape(self) -> "GeometryPrimitive":
        if self.kind == PrimitiveKind.BOX:
            if self.extents is None:
                raise ValueError("box primitive requires 'extents'")
            if any(not (e > 0) for e in self.extents):
                raise ValueError("box 'extents' must be positive")
        else:
            if self.radius is None:
                raise ValueError("sphere primitive requires 'radius'")
            if not (self.radius > 0):
                raise ValueError("sphere 'radius' must be positive")
        return self

    @classmethod
    def box(cls, center: Vec3, extents: Vec3) -> "GeometryPrimitive":
        return cls(kind=PrimitiveKind.BOX, center=center, extents=extents)

    @classmethod
    def sphere(cls, center: Vec3, radius: float) -> "GeometryPrimitive":
        return cls(kind=PrimitiveKind.SPHERE, center=center, radius=radius)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the bounding box"""
        c = np.asarray(self.center, dtype=float)
        if self.kind == PrimitiveKind.BOX:
            half = 0.5 * np.asarray(self.extents, dtype=float)
        else:
            half = np.full(3, float(self.radius))
        return c - half, c + half

    def strictly_contains(self, other: "GeometryPrimitive") -> bool:
        """True if the bounding box of `other` lies in the interior of this box"""
        lo, hi = self.bounds()
        olo, ohi = other.bounds()
        return bool(np.all(olo > lo) and np.all(ohi < hi))

    def stretched(self, factor: float, axis: int = 0) -> "GeometryPrimitive":
        """Copy scaled by `factor` along one axis (center scaled too)"""
        center = list(self.center)
        center[axis] *= factor
        if self.kind == PrimitiveKind.BOX:
            extents = list(self.extents)
            extents[axis] *= factor
            return GeometryPrimitive.box(tuple(center), tuple(extents))
        raise ValueError("only box primitives can be stretched")


class MeshSource(StrictModel):
    """Either a mesh file (`path`) or generator parameters.

    The inner primitive is always needed: it seeds the signed distance field.
    Default geometry is the 13 x 13 x 4 mm block in a 30 x 30 x 20 mm medium box;
    the medium dimensions are a repository choice.
    """

    path: Optional[str] = None
    outer: GeometryPrimitive = GeometryPrimitive.box((0.0, 0.0, 0.0), (30.0, 30.0, 20.0))
    inner: GeometryPrimitive = GeometryPrimitive.box((0.0, 0.0, 0.0), (13.0, 13.0, 4.0))
    coarse_h: float = Field(default=2.0, gt=0)
    fine_h: float = Field(default=0.5, gt=0)
    refine_margin: Optional[float] = Field(default=None, ge=0)
    grading: float = Field(default=1.3, gt=1.0, le=1.5)

    @model_validator(mode="after")
    def validate_sizes(self) -> "MeshSource":
        if self.outer.kind != PrimitiveKind.BOX:
            raise ValueError("outer primitive must be a box")
        if self.fine_h > self.coarse_h:
            raise ValueError("fine_h must not exceed coarse_h")
        if self.path is None and not self.outer.strictly_contains(self.inner):
            raise ValueError("inner primitive must lie strictly inside the outer box")
        return self


class ChemParams(StrictModel):
    """Degradation chemistry.

    Every default below is a placeholder in the range reported by external
    literature and calibration studies; none of them is a measured constant.
    Units: lengths mm, time h, concentrations g/L unless stated.
    """

    d_mg: float = Field(default=2.5, ge=0)  # mm^2/h
    k1: float = Field(default=1.0, ge=0)  # 1/h
    k2: float = Field(default=0.5, ge=0)  # (L/mol)^2/h
    cl: float = Field(default=0.15, ge=0)  # mol/L
    rho_film: float = Field(default=2344.0, gt=0)  # g/L
    porosity: float = Field(default=0.55, ge=0, le=1)
    tortuosity: float = Field(default=1.0, ge=1)
    mg_sol: float = Field(default=1740.0, gt=0)  # g/L
    mg_sat: float = Field(default=134.0, ge=0)  # g/L
    mg_molar: float = Field(default=24.305, gt=0)  # g/mol
    temperature: float = Field(default=310.15, gt=0)  # K
    pressure: float = Field(default=101325.0, gt=0)  # Pa

    @model_validator(mode="after")
    def validate_solubility(self) -> "ChemParams":
        if not self.mg_sol > self.mg_sat:
            raise ValueError("mg_sol must be greater than mg_sat")
        return self

    @property
    def film_max(self) -> float:
        """Maximum film concentration, rho_film * (1 - porosity)"""
        return self.rho_film * (1.0 - self.porosity)


class SolverConfig(StrictModel):
    method: SolverMethod = SolverMethod.GMRES
    restart: int = Field(default=30, ge=1)
    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=1e-14, gt=0)
    max_iters: int = Field(default=1000, ge=1)
    preconditioner: PreconditionerKind = PreconditionerKind.RAS
    ras_local_solver: LocalSolverKind = LocalSolverKind.DENSE_LU
    dense_threshold: int = Field(default=2000, ge=1)
    ilu_sweeps: int = Field(default=2, ge=1)


class SolverSection(StrictModel):
    mg: SolverConfig = SolverConfig()
    levelset: SolverConfig = SolverConfig()


class NumericsConfig(StrictModel):
    lump_mg_mass: bool = True
    lump_levelset_mass: bool = False
    penalty_weight: float = Field(default=1e10, gt=0)
    band_width: float = Field(default=3.0, gt=0)  # in units of h
    conservative_exchange: bool = True
    initial_medium_mg: float = Field(default=0.0, ge=0)
    initial_film: float = Field(default=0.0, ge=0)
    gradient_guard: Tuple[float, float] = (0.2, 5.0)


class PerfConfig(StrictModel):
    measure_steps: int = Field(default=5, ge=1)
    worker_counts: List[int] = [1, 2, 4, 8]
    fit_input: Optional[str] = None
    law: ScalingLaw = ScalingLaw.AMDAHL

    @field_validator("worker_counts")
    @classmethod
    def validate_worker_counts(cls, v: List[int]) -> List[int]:
        if not v or any(n < 1 for n in v):
            raise ValueError("worker_counts must be a non-empty list of positive integers")
        return sorted(set(v))


class SimConfig(StrictModel):
    dt: float = Field(default=0.025, gt=0)  # h
    end_time: float = Field(gt=0)  # h
    workers: int = Field(default=1, ge=1)
    overlap: int = Field(default=1, ge=0)
    seed: int = 0
    mode: RunMode = RunMode.SIMULATE
    output_dir: str = "output"
    snapshot_interval: int = Field(default=0, ge=0)  # steps, 0 disables
    mesh: MeshSource = MeshSource()
    chemistry: ChemParams = ChemParams()
    solver: SolverSection = SolverSection()
    numerics: NumericsConfig = NumericsConfig()
    perf: PerfConfig = PerfConfig()

    @model_validator(mode="after")
    def validate_times(self) -> "SimConfig":
        if self.end_time < self.dt:
            raise ValueError("end_time must be at least dt")
        return self

    @property
    def num_steps(self) -> int:
        return int(math.floor(self.end_time / self.dt + 1e-9))
