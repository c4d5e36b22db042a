from .logger import logger
from .errors import (
    CorrolabError,
    ConfigError,
    ArgumentError,
    GeometryError,
    ResourceError,
    MeshFormatError,
    DegenerateElementError,
    PartitionError,
    ConformanceError,
    AssemblyError,
    SolverError,
    SingularSystemError,
    NonConvergenceError,
    SubdomainSolveError,
    DegenerateGradientError,
    WorkerError,
    SimulationError,
)

__all__ = [
    "logger",
    "CorrolabError",
    "ConfigError",
    "ArgumentError",
    "GeometryError",
    "ResourceError",
    "MeshFormatError",
    "DegenerateElementError",
    "PartitionError",
    "ConformanceError",
    "AssemblyError",
    "SolverError",
    "SingularSystemError",
    "NonConvergenceError",
    "SubdomainSolveError",
    "DegenerateGradientError",
    "WorkerError",
    "SimulationError",
]
