"""Level-set interface tracking and the degradation observables.

phi is positive in the bulk metal and negative in the medium. The interface
moves with the normal velocity V = D_e * dC/dn / (mg_sol - mg_sat), computed
on a narrow band and extended outward by nearest-band-node values.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.models import ChemParams, GeometryPrimitive, PrimitiveKind, SolverConfig, SolveStats
from src.services.discretization import Discretization
from src.services.fem import Assembler, AssembledSystem, element_gradients, mass_kernels
from src.services.linsolve import gather_owned
from src.services.mesh import Mesh
from src.services.physics import effective_diffusion
from src.services.workers import handler
from src.utils import ArgumentError, DegenerateGradientError, logger

GAS_CONSTANT = 8.314  # J/(mol K)
MM3_TO_L = 1e-6
MM2_TO_M2 = 1e-6
# |grad phi| below which the interface normal is undefined
GRADIENT_FLOOR = 1e-12
# barycentric slack when testing whether a point lies in a tet
INSIDE_TOL = 1e-10


def init_signed_distance(mesh: Mesh, primitive: GeometryPrimitive) -> np.ndarray:
    """Analytic signed distance to the primitive, positive inside"""
    points = mesh.nodes
    center = np.asarray(primitive.center, dtype=np.float64)
    if primitive.kind == PrimitiveKind.SPHERE:
        return primitive.radius - np.linalg.norm(points - center, axis=1)
    if primitive.kind == PrimitiveKind.BOX:
        half = 0.5 * np.asarray(primitive.extents, dtype=np.float64)
        q = np.abs(points - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return -(outside + inside)
    raise ArgumentError(f"no analytic distance for primitive '{primitive.kind}'")


def nodal_gradients(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    """Volume-weighted average of the element gradients around each node"""
    grads = element_gradients(mesh, phi)
    incidence = mesh.node_elements
    weighted = incidence @ (mesh.volumes[:, None] * grads)
    return weighted / (incidence @ mesh.volumes)[:, None]


def narrow_band(phi: np.ndarray, h: float, width: float = 3.0) -> np.ndarray:
    return np.abs(phi) <= width * h


class PointLocator:
    """Finds the tet containing each query point, seeded by nearest centroids"""

    def __init__(self, mesh: Mesh, candidates: int = 16):
        self.mesh = mesh
        self.candidates = min(candidates, mesh.num_tets)
        self.tree = cKDTree(mesh.centroids)

    def _barycentric(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        # lambda_a(x) = 1 + grad(lambda_a) . (x - x_a)
        verts = self.mesh.nodes[self.mesh.tets[elements]]
        grads = self.mesh.gradients[elements]
        return 1.0 + np.einsum("...ai,...ai->...a", grads, points[..., None, :] - verts)

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(element, barycentric coordinates) per point; element -1 if outside"""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        found = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 4))
        pending = np.arange(len(points))
        k = self.candidates
        while len(pending):
            _, cand = self.tree.query(points[pending], k=k)
            cand = np.asarray(cand).reshape(len(pending), -1)
            lam = self._barycentric(cand, points[pending][:, None, :])
            inside = np.all(lam >= -INSIDE_TOL, axis=2)
            hit = inside.any(axis=1)
            first = np.argmax(inside, axis=1)
            rows = pending[hit]
            found[rows] = cand[hit, first[hit]]
            bary[rows] = lam[hit, first[hit]]
            pending = pending[~hit]
            if k >= min(4 * self.candidates, self.mesh.num_tets):
                break
            k = min(4 * self.candidates, self.mesh.num_tets)
        return found, bary

    def interpolate(self, values: np.ndarray, points: np.ndarray, fallback: np.ndarray) -> np.ndarray:
        """P1 interpolation at points; points outside the mesh take `fallback`"""
        elements, bary = self.locate(points)
        out = np.array(fallback, dtype=np.float64)
        ok = elements >= 0
        out[ok] = np.einsum("pa,pa->p", np.asarray(values)[self.mesh.tets[elements[ok]]], bary[ok])
        return out


def unit_normals(
    mesh: Mesh, phi: np.ndarray, nodes: np.ndarray, labels: Optional[np.ndarray] = None
) -> np.ndarray:
    """grad phi / |grad phi| at `nodes`; `labels` name the nodes in the error message"""
    grad = nodal_gradients(mesh, phi)[nodes]
    norm = np.linalg.norm(grad, axis=1)
    if np.any(norm < GRADIENT_FLOOR):
        bad = (nodes if labels is None else labels)[np.argmin(norm)]
        raise DegenerateGradientError(f"|grad phi| vanishes at band node {int(bad)}")
    return grad / norm[:, None]


def band_velocity(
    nodes: np.ndarray,
    offset: np.ndarray,
    normals: np.ndarray,
    c_mg: np.ndarray,
    diffusion: np.ndarray,
    locator: PointLocator,
    h: float,
    params: ChemParams,
) -> np.ndarray:
    """Velocity at band nodes from two medium-side samples at h and 2h.

    `offset` (phi) and `normals` are given per node; `c_mg` and `diffusion`
    are nodal fields of the locator's mesh.
    """
    x = locator.mesh.nodes[nodes]
    near = x - (offset + h)[:, None] * normals
    far = x - (offset + 2.0 * h)[:, None] * normals
    own_c = c_mg[nodes]
    c_near = locator.interpolate(c_mg, near, own_c)
    c_far = locator.interpolate(c_mg, far, own_c)
    d_near = locator.interpolate(diffusion, near, diffusion[nodes])
    flux = d_near * (c_near - c_far) / h
    return flux / (params.mg_sol - params.mg_sat)


def extend_from_band(
    points: np.ndarray, band_points: np.ndarray, band_values: np.ndarray
) -> np.ndarray:
    """Value of the nearest band point at each query point"""
    _, nearest = cKDTree(band_points).query(points)
    return band_values[nearest]


def _locator(state) -> PointLocator:
    if "locator" not in state:
        state["locator"] = PointLocator(state["context"].global_mesh)
    return state["locator"]


@handler("velocity")
def _velocity(state, phi, c_mg, diffusion, h, band_width, params):
    """Velocity at the owned band nodes, as (global nodes, values)"""
    domain = state["context"]
    rows = domain.owned_rows
    rows = rows[narrow_band(phi[rows], h, band_width)]
    nodes = domain.nodes[rows]
    if not len(rows):
        return nodes, np.zeros(0)
    normals = unit_normals(domain.mesh, phi, rows, labels=nodes)
    return nodes, band_velocity(
        nodes, phi[rows], normals, c_mg, diffusion, _locator(state), h, params
    )


@handler("extend_velocity")
def _extend_velocity(state, band, velocity):
    """Owned-node velocities; off-band nodes take the value of the nearest band node"""
    domain = state["context"]
    points = domain.global_mesh.nodes
    owned = domain.nodes[domain.owned_rows]
    values = velocity[owned].copy()
    off = ~band[owned]
    if off.any():
        band_nodes = np.flatnonzero(band)
        values[off] = extend_from_band(points[owned[off]], points[band_nodes], velocity[band_nodes])
    return values


@dataclass
class VelocityField:
    velocity: np.ndarray
    band: np.ndarray


def interface_velocity(
    phi: np.ndarray,
    c_mg: np.ndarray,
    c_film: np.ndarray,
    mesh: Mesh,
    params: ChemParams,
    band_width: float = 3.0,
    disc: Optional[Discretization] = None,
) -> VelocityField:
    """Normal velocity on the narrow band, constant-extended to all nodes"""
    h = mesh.min_edge_h
    band = narrow_band(phi, h, band_width)
    velocity = np.zeros(mesh.num_nodes)
    band_nodes = np.flatnonzero(band)
    if not len(band_nodes):
        logger.warning("Narrow band is empty; interface velocity set to zero")
        return VelocityField(velocity, band)
    diffusion = effective_diffusion(c_film, params)

    if disc is None:
        normals = unit_normals(mesh, phi, band_nodes)
        velocity[band_nodes] = band_velocity(
            band_nodes, phi[band_nodes], normals, c_mg, diffusion, PointLocator(mesh), h, params
        )
        off_band = np.flatnonzero(~band)
        if len(off_band):
            velocity[off_band] = extend_from_band(
                mesh.nodes[off_band], mesh.nodes[band_nodes], velocity[band_nodes]
            )
        return VelocityField(velocity, band)

    parts = disc.scatter_fields(
        "velocity",
        {"phi": phi},
        c_mg=c_mg,
        diffusion=diffusion,
        h=h,
        band_width=band_width,
        params=params,
    )
    for nodes, values in parts:
        velocity[nodes] = values
    parts = disc.broadcast("extend_velocity", band=band, velocity=velocity)
    return VelocityField(gather_owned(disc.decomp, parts), band)


def levelset_system(
    mesh: Mesh,
    assembler: Assembler,
    phi: np.ndarray,
    velocity: np.ndarray,
    dt: float,
    lump: bool = False,
) -> AssembledSystem:
    """M phi_new = M phi - dt H V, H the mass matrix weighted by the element |grad phi|"""
    grad_norm = np.linalg.norm(element_gradients(mesh, phi), axis=1)
    hamiltonian = assembler.from_kernels(grad_norm[:, None, None] * mass_kernels(mesh))
    mass = assembler.mass_operator(lump)
    return AssembledSystem(mass, mass @ phi - dt * (hamiltonian @ velocity))


@handler("assemble_levelset")
def _assemble_levelset(state, key, phi, velocity, dt, lump):
    domain = state["context"]
    system = levelset_system(domain.mesh, domain.assembler, phi, velocity, dt, lump)
    return domain.stage(key, system)


def advance_levelset(
    phi: np.ndarray,
    velocity: np.ndarray,
    dt: float,
    disc: Discretization,
    solver: SolverConfig,
    lump: bool = False,
) -> Tuple[np.ndarray, SolveStats]:
    """Backward-Euler step of dphi/dt + V |grad phi| = 0 with |grad phi| lagged"""
    system = disc.assemble_staged(
        "assemble_levelset",
        {"phi": phi, "velocity": velocity},
        solver,
        key="levelset",
        dt=dt,
        lump=lump,
    )
    return system.solve(solver, x0=np.array(phi, dtype=np.float64), name="levelset")


def positive_fractions(phi_elements: np.ndarray) -> np.ndarray:
    """Exact volume fraction of {phi >= 0} in each tet for linear phi, shape (m,)"""
    s = -np.sort(-np.asarray(phi_elements, dtype=np.float64), axis=1)
    positive = (s >= 0).sum(axis=1)
    frac = np.where(positive == 4, 1.0, 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        a, b, c, d = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
        one = (a / (a - b)) * (a / (a - c)) * (a / (a - d))
        three = 1.0 - (-d / (a - d)) * (-d / (b - d)) * (-d / (c - d))
        t_ac, t_ad = a / (a - c), a / (a - d)
        t_bc, t_bd = b / (b - c), b / (b - d)
        two = t_ac * t_ad * (1.0 - t_bd) + t_ac * (1.0 - t_bc) * t_bd + t_bc * t_bd

    frac = np.where(positive == 1, one, frac)
    frac = np.where(positive == 2, two, frac)
    frac = np.where(positive == 3, three, frac)
    return frac


def _cut(points: np.ndarray, phi: np.ndarray, x: int, y: int) -> np.ndarray:
    t = phi[:, x] / (phi[:, x] - phi[:, y])
    return points[:, x] + t[:, None] * (points[:, y] - points[:, x])


def _triangle_area(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(q - p, r - p), axis=1)


def interface_areas(
    mesh: Mesh, phi: np.ndarray, elements: Optional[np.ndarray] = None
) -> np.ndarray:
    """Area of the phi = 0 isosurface inside each tet (marching tetrahedra)"""
    tets = mesh.tets if elements is None else mesh.tets[elements]
    phi_e = np.asarray(phi, dtype=np.float64)[tets]
    order = np.argsort(-phi_e, axis=1, kind="stable")
    s = np.take_along_axis(phi_e, order, axis=1)
    pts = np.take_along_axis(mesh.nodes[tets], order[:, :, None], axis=1)
    positive = (s >= 0).sum(axis=1)
    area = np.zeros(len(tets))

    one = positive == 1
    if one.any():
        p, f = pts[one], s[one]
        area[one] = _triangle_area(_cut(p, f, 0, 1), _cut(p, f, 0, 2), _cut(p, f, 0, 3))
    three = positive == 3
    if three.any():
        p, f = pts[three], s[three]
        area[three] = _triangle_area(_cut(p, f, 0, 3), _cut(p, f, 1, 3), _cut(p, f, 2, 3))
    two = positive == 2
    if two.any():
        p, f = pts[two], s[two]
        ac, bc, bd, ad = _cut(p, f, 0, 2), _cut(p, f, 1, 2), _cut(p, f, 1, 3), _cut(p, f, 0, 3)
        area[two] = _triangle_area(ac, bc, bd) + _triangle_area(ac, bd, ad)
    return area


def solid_volumes(mesh: Mesh, phi: np.ndarray, elements: Optional[np.ndarray] = None) -> np.ndarray:
    """Volume of {phi >= 0} inside each tet"""
    tets = mesh.tets if elements is None else mesh.tets[elements]
    volumes = mesh.volumes if elements is None else mesh.volumes[elements]
    return volumes * positive_fractions(np.asarray(phi)[tets])


GEOMETRY = {"volume": solid_volumes, "area": interface_areas}


@handler("geometry")
def _geometry(state, phi, quantity):
    """Sum of a per-element quantity over the core elements"""
    domain = state["context"]
    return math.fsum(GEOMETRY[quantity](domain.mesh, phi, domain.core))


def _geometry_total(
    quantity: str, phi: np.ndarray, mesh: Mesh, disc: Optional[Discretization]
) -> float:
    if disc is None:
        return math.fsum(GEOMETRY[quantity](mesh, phi))
    return disc.ordered_sum(disc.scatter_fields("geometry", {"phi": phi}, quantity=quantity))


def solid_volume(phi: np.ndarray, mesh: Mesh, disc: Optional[Discretization] = None) -> float:
    """Volume (mm^3) of {phi >= 0}; with a decomposition, ghost elements are skipped"""
    return _geometry_total("volume", phi, mesh, disc)


def interface_area(phi: np.ndarray, mesh: Mesh, disc: Optional[Discretization] = None) -> float:
    """Area (mm^2) of the zero level set"""
    phi = np.asarray(phi)
    if phi.min() >= 0 or phi.max() < 0:
        logger.info("phi has a single sign; interface area is zero")
        return 0.0
    return _geometry_total("area", phi, mesh, disc)


def mass_from_volumes(initial_volume: float, volume: float, params: ChemParams) -> float:
    """Mass lost (g) when the solid shrinks from initial_volume to volume (mm^3)"""
    return params.mg_sol * (initial_volume - volume) * MM3_TO_L


def mass_loss(
    phi_t: np.ndarray,
    phi_0: np.ndarray,
    mesh: Mesh,
    params: ChemParams,
    disc: Optional[Discretization] = None,
) -> float:
    return mass_from_volumes(
        solid_volume(phi_0, mesh, disc), solid_volume(phi_t, mesh, disc), params
    )


def hydrogen_volume(mass_lost: float, area_m2: float, params: ChemParams) -> float:
    """Evolved hydrogen per exposed area (m^3/m^2) from the ideal gas law"""
    if not area_m2 > 0:
        raise ArgumentError(f"interface area must be positive, got {area_m2}")
    moles = mass_lost / params.mg_molar
    return moles * GAS_CONSTANT * params.temperature / (params.pressure * area_m2)


def band_gradient_max(
    mesh: Mesh, phi: np.ndarray, band: np.ndarray, elements: Optional[np.ndarray] = None
) -> float:
    """Max |grad phi| over the elements (or the given ones) with a band node"""
    if elements is None:
        elements = np.arange(mesh.num_tets)
    chosen = elements[band[mesh.tets[elements]].any(axis=1)]
    if not len(chosen):
        return 0.0
    return float(np.linalg.norm(element_gradients(mesh, phi, chosen), axis=1).max())


@handler("gradient_max")
def _gradient_max(state, phi, band):
    domain = state["context"]
    return band_gradient_max(domain.mesh, phi, band, domain.core)


def gradient_guard(
    phi: np.ndarray,
    mesh: Mesh,
    band: np.ndarray,
    bounds: Tuple[float, float] = (0.2, 5.0),
    disc: Optional[Discretization] = None,
) -> float:
    """Max |grad phi| over band elements; warns when it leaves `bounds`"""
    if not np.any(band):
        return 0.0
    if disc is None:
        largest = band_gradient_max(mesh, phi, band)
    else:
        largest = max(disc.scatter_fields("gradient_max", {"phi": phi, "band": band}))
    if not bounds[0] <= largest <= bounds[1]:
        logger.warning(
            f"max |grad phi| on the band is {largest:.3g}, outside [{bounds[0]}, {bounds[1]}]; "
            f"the level set has drifted from a distance function"
        )
    return largest
