from .mesh import Mesh, generate_box_mesh
from .decomp import OverlapDecomposition, build_overlap, partition_mesh
from .fem import Assembler, AssemblyInput, PenaltySet, assemble_system
from .linsolve import gmres_solve, solve_distributed
from .workers import InlinePool, WorkerPool
from .discretization import Discretization
from .physics import step_film, step_mg
from .levelset import advance_levelset, init_signed_distance, interface_velocity
from .perf import build_report, fit_amdahl, fit_gustafson, measure_step
from .runconfig import parse_config

__all__ = [
    "Mesh",
    "generate_box_mesh",
    "OverlapDecomposition",
    "build_overlap",
    "partition_mesh",
    "Assembler",
    "AssemblyInput",
    "PenaltySet",
    "assemble_system",
    "gmres_solve",
    "solve_distributed",
    "InlinePool",
    "WorkerPool",
    "Discretization",
    "step_film",
    "step_mg",
    "advance_levelset",
    "init_signed_distance",
    "interface_velocity",
    "build_report",
    "fit_amdahl",
    "fit_gustafson",
    "measure_step",
    "parse_config",
]
