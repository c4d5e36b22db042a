"""Degradation chemistry: effective diffusion, reaction coefficients and the
per-step updates of the dissolved Mg and protective-film concentrations.

    dC_mg/dt   = div(D_e grad C_mg) - k1 C_mg s + k2 C_film [Cl]^2
    dC_film/dt = k1 C_mg s - k2 C_film [Cl]^2,    s = 1 - C_film / film_max
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.models import ChemParams, FieldState, NumericsConfig, SolverConfig, SolveStats
from src.services.discretization import Discretization
from src.services.fem import AssemblyInput, PenaltySet
from src.services.workers import handler
from src.utils import ConfigError, logger


def _film_max(params: ChemParams) -> float:
    film_max = params.film_max
    if film_max == 0:
        raise ConfigError("film_max is zero (porosity = 1)", ["chemistry.porosity"])
    return film_max


def saturation(c_film, params: ChemParams):
    """s = 1 - c_film / film_max, clamped to [0, 1]"""
    return np.clip(1.0 - np.asarray(c_film, dtype=np.float64) / _film_max(params), 0.0, 1.0)


def effective_diffusion(c_film, params: ChemParams):
    """D_e = D_mg * ((1 - c/F) + (c/F) * porosity / tortuosity)"""
    ratio = np.asarray(c_film, dtype=np.float64) / _film_max(params)
    return params.d_mg * ((1.0 - ratio) + ratio * (params.porosity / params.tortuosity))


def alpha_coefficient(c_film, dt: float, params: ChemParams):
    """alpha = 1 / (1 + dt * k1 * s)"""
    return 1.0 / (1.0 + dt * params.k1 * saturation(c_film, params))


def film_source(c_film, params: ChemParams):
    """Film breakdown released into the medium, k2 * c_film * [Cl]^2"""
    return params.k2 * np.asarray(c_film, dtype=np.float64) * params.cl**2


@dataclass
class MgStep:
    c_mg: np.ndarray
    stats: SolveStats
    penalized: np.ndarray
    clamped: int


def step_mg(
    state: FieldState,
    disc: Discretization,
    params: ChemParams,
    dt: float,
    solver: SolverConfig,
    numerics: NumericsConfig = NumericsConfig(),
) -> MgStep:
    """Backward-Euler solve for c_mg with the bulk (phi >= 0) pinned to mg_sol"""
    diffusion = effective_diffusion(state.c_film, params)
    alpha = alpha_coefficient(state.c_film, dt, params)
    bulk = np.flatnonzero(state.phi >= 0)
    penalty = PenaltySet(bulk, params.mg_sol, numerics.penalty_weight) if len(bulk) else None

    inp = AssemblyInput(
        mesh=disc.mesh,
        dt=dt,
        diffusion=diffusion,
        alpha=alpha,
        source=film_source(state.c_film, params),
        previous=state.c_mg,
        penalty=penalty,
        lump=numerics.lump_mg_mass,
    )
    x0 = state.c_mg.copy()
    x0[bulk] = params.mg_sol
    c_mg, stats = disc.solve(inp, solver, x0=x0, name="mg")

    negative = c_mg < 0
    clamped = int(negative.sum())
    if clamped:
        logger.info(f"Clamped {clamped} negative c_mg values to 0")
        c_mg[negative] = 0.0
    return MgStep(c_mg, stats, bulk, clamped)


def step_film(c_film, c_mg, params: ChemParams, dt: float) -> np.ndarray:
    """Nodewise implicit update of the film, clamped to [0, film_max]"""
    film_max = _film_max(params)
    c_film = np.asarray(c_film, dtype=np.float64)
    c_mg = np.asarray(c_mg, dtype=np.float64)
    numerator = c_film + dt * params.k1 * c_mg
    denominator = 1.0 + dt * (params.k1 * c_mg / film_max + params.k2 * params.cl**2)
    return np.clip(numerator / denominator, 0.0, film_max)


@handler("film")
def _film(state, c_film, c_mg, params, dt):
    return step_film(c_film, c_mg, params, dt)


def step_film_distributed(
    disc: Discretization, c_film: np.ndarray, c_mg: np.ndarray, params: ChemParams, dt: float
) -> np.ndarray:
    """step_film on every worker's owned nodes"""
    owned = disc.decomp.owned_sets
    parts = disc.pool.scatter(
        "film",
        [
            {"c_film": c_film[rows], "c_mg": c_mg[rows], "params": params, "dt": dt}
            for rows in owned
        ],
    )
    out = np.empty_like(c_film)
    for rows, part in zip(owned, parts):
        out[rows] = part
    return out


def reaction_exchange(
    c_film_old: np.ndarray, c_mg_new: np.ndarray, params: ChemParams, dt: float
) -> np.ndarray:
    """Reaction increment the Mg solve applied per node, dt * (k2 c_film q^2 - k1 s c_mg)"""
    return dt * (
        film_source(c_film_old, params) - params.k1 * saturation(c_film_old, params) * c_mg_new
    )


def reconcile_exchange(
    c_mg: np.ndarray,
    c_film_old: np.ndarray,
    c_film_new: np.ndarray,
    params: ChemParams,
    dt: float,
    penalized: np.ndarray,
) -> Tuple[np.ndarray, int]:
    """Make the Mg reaction increment mirror the film increment on free nodes.

    The staggered Mg-then-film update evaluates the shared reaction terms at
    different states; shifting c_mg by the mismatch restores
    sum(lumped * (c_mg + c_film)) exactly. Returns the corrected c_mg and the
    number of values clamped at zero.
    """
    mismatch = (c_film_new - c_film_old) + reaction_exchange(c_film_old, c_mg, params, dt)
    mismatch[penalized] = 0.0
    out = c_mg - mismatch
    negative = out < 0
    clamped = int(negative.sum())
    if clamped:
        logger.debug(f"Exchange reconciliation clamped {clamped} c_mg values")
        out[negative] = 0.0
    return out, clamped


def total_species(lumped_mass: np.ndarray, c_mg: np.ndarray, c_film: np.ndarray) -> float:
    """sum(lumped * (c_mg + c_film)), conserved by closed no-flux systems"""
    return float(np.dot(lumped_mass, c_mg + c_film))
