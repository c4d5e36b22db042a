from .schemas import (
    GeometryPrimitive,
    PrimitiveKind,
    MeshSource,
    ChemParams,
    SolverConfig,
    SolverSection,
    SolverMethod,
    PreconditionerKind,
    LocalSolverKind,
    NumericsConfig,
    PerfConfig,
    SimConfig,
    RunMode,
    ScalingLaw,
)
from .records import (
    SolveStats,
    FieldState,
    ObservableRow,
    TimingRecord,
    ScalingReport,
)

__all__ = [
    "GeometryPrimitive",
    "PrimitiveKind",
    "MeshSource",
    "ChemParams",
    "SolverConfig",
    "SolverSection",
    "SolverMethod",
    "PreconditionerKind",
    "LocalSolverKind",
    "NumericsConfig",
    "PerfConfig",
    "SimConfig",
    "RunMode",
    "ScalingLaw",
    "SolveStats",
    "FieldState",
    "ObservableRow",
    "TimingRecord",
    "ScalingReport",
]
