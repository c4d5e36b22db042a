"""Unstructured tetrahedral meshes: container, queries and the graded box generator."""

import math
from dataclasses import dataclass, fields
from functools import cached_property
from itertools import permutations
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from src.config import settings
from src.models import GeometryPrimitive, PrimitiveKind
from src.utils import DegenerateElementError, GeometryError, ResourceError, logger

TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
# face i is opposite vertex i
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

# relative volume below which a tet counts as flat
DEGENERATE_RTOL = 1e-14

BOUNDARY_TAGS = {(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 4, (2, 0): 5, (2, 1): 6}


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of every tet, one sixth of the edge-vector triple product"""
    p = nodes[tets]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


def degenerate_mask(nodes: np.ndarray, tets: np.ndarray, volumes: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    edges = p[:, TET_EDGES[:, 1]] - p[:, TET_EDGES[:, 0]]
    longest = np.linalg.norm(edges, axis=2).max(axis=1)
    return np.abs(volumes) <= DEGENERATE_RTOL * longest**3


def signed_volume(tet, nodes) -> float:
    """Signed volume (mm^3) of one tet given its 4 node indices"""
    tet = np.asarray(tet, dtype=np.int64).reshape(1, 4)
    if len(set(tet[0].tolist())) != 4:
        raise DegenerateElementError(f"tet {tet[0].tolist()} needs 4 distinct nodes")
    nodes = np.asarray(nodes, dtype=float)
    vol = signed_volumes(nodes, tet)
    if degenerate_mask(nodes, tet, vol)[0]:
        raise DegenerateElementError(f"tet {tet[0].tolist()} is degenerate (zero volume)")
    return float(vol[0])


def face_incidence(tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unique sorted faces of a tet set and how many tets share each"""
    faces = np.sort(tets[:, TET_FACES].reshape(-1, 3), axis=1)
    unique, counts = np.unique(faces, axis=0, return_counts=True)
    return unique, counts


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral mesh; coordinates in mm.

    Build instances with :meth:`Mesh.build`, which orients every tet
    positively, rejects flat tets and records the smallest edge length.
    """

    nodes: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    face_tags: np.ndarray
    min_edge_h: float

    @classmethod
    def build(
        cls,
        nodes,
        tets,
        boundary_faces=None,
        face_tags=None,
        check_connected: bool = True,
    ) -> "Mesh":
        nodes = np.array(nodes, dtype=np.float64).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if boundary_faces is None:
            boundary_faces = np.zeros((0, 3), dtype=np.int64)
        boundary_faces = np.array(boundary_faces, dtype=np.int64).reshape(-1, 3)
        if face_tags is None:
            face_tags = np.zeros(len(boundary_faces), dtype=np.int64)
        face_tags = np.array(face_tags, dtype=np.int64).reshape(-1)

        n = len(nodes)
        if len(tets) == 0:
            raise GeometryError("mesh has no elements")
        if tets.min() < 0 or tets.max() >= n:
            raise GeometryError("tet node index out of range")
        if len(boundary_faces) and (boundary_faces.min() < 0 or boundary_faces.max() >= n):
            raise GeometryError("boundary face node index out of range")
        if len(face_tags) != len(boundary_faces):
            raise GeometryError("one tag per boundary face required")

        volumes = signed_volumes(nodes, tets)
        flat = degenerate_mask(nodes, tets, volumes)
        if flat.any():
            first = int(np.flatnonzero(flat)[0])
            raise DegenerateElementError(f"element {first} has zero volume")
        negative = volumes < 0
        if negative.any():
            tets[negative] = tets[negative][:, [0, 1, 3, 2]]

        p = nodes[tets]
        edge_vectors = p[:, TET_EDGES[:, 1]] - p[:, TET_EDGES[:, 0]]
        min_edge_h = float(np.linalg.norm(edge_vectors, axis=2).min())

        for array in (nodes, tets, boundary_faces, face_tags):
            array.flags.writeable = False
        mesh = cls(nodes, tets, boundary_faces, face_tags, min_edge_h)
        if check_connected and mesh.component_count() != 1:
            raise GeometryError("mesh is not connected")
        return mesh

    def __getstate__(self):
        # derived arrays are recomputed on demand after unpickling
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def volumes(self) -> np.ndarray:
        vol = signed_volumes(self.nodes, self.tets)
        vol.flags.writeable = False
        return vol

    @cached_property
    def total_volume(self) -> float:
        return float(math.fsum(self.volumes))

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.tets].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique node pairs (i < j) over all element edges"""
        pairs = np.sort(self.tets[:, TET_EDGES].reshape(-1, 2), axis=1)
        return np.unique(pairs, axis=0)

    @cached_property
    def node_elements(self) -> sp.csr_matrix:
        """Node-to-element incidence (num_nodes x num_tets, boolean pattern)"""
        rows = self.tets.reshape(-1)
        cols = np.repeat(np.arange(self.num_tets), 4)
        data = np.ones(len(rows), dtype=np.int8)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, self.num_tets))

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the four P1 shape functions per tet, shape (m, 4, 3)"""
        p = self.nodes[self.tets]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
        inv = np.linalg.inv(jac)
        grads = np.empty((self.num_tets, 4, 3))
        grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        return grads

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def component_count(self) -> int:
        e = self.edges
        graph = sp.coo_matrix(
            (np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.num_nodes, self.num_nodes)
        )
        used = np.zeros(self.num_nodes, dtype=bool)
        used[self.tets.reshape(-1)] = True
        n_components, labels = connected_components(graph, directed=False)
        # isolated unused nodes do not count as components
        return len(np.unique(labels[used]))

    def submesh(self, elements: np.ndarray) -> Tuple["Mesh", np.ndarray]:
        """Mesh restricted to `elements`, plus the global index of each local node"""
        elements = np.asarray(elements, dtype=np.int64)
        local_nodes, inverse = np.unique(self.tets[elements], return_inverse=True)
        local_tets = inverse.reshape(-1, 4)
        sub = Mesh.build(self.nodes[local_nodes], local_tets, check_connected=False)
        return sub, local_nodes

    def tagged_faces(self, tag: int) -> np.ndarray:
        return self.boundary_faces[self.face_tags == tag]


def _graded_run(length: float, fine_h: float, coarse_h: float, grading: float) -> np.ndarray:
    """Offsets of a run growing geometrically from fine_h to coarse_h, ending at `length`"""
    if length <= 0:
        return np.zeros(0)
    sizes = []
    size = fine_h
    total = 0.0
    while total < length * (1 - 1e-12):
        size = min(coarse_h, size * grading)
        sizes.append(size)
        total += size
    offsets = np.cumsum(sizes) * (length / total)
    offsets[-1] = length
    return offsets


def _axis_coordinates(
    lo: float,
    hi: float,
    fine_lo: float,
    fine_hi: float,
    coarse_h: float,
    fine_h: float,
    grading: float,
) -> np.ndarray:
    if math.isclose(fine_h, coarse_h, rel_tol=1e-12):
        n = max(1, math.ceil((hi - lo) / coarse_h - 1e-9))
        return np.linspace(lo, hi, n + 1)

    fine_lo = max(lo, fine_lo)
    fine_hi = min(hi, fine_hi)
    # absorb slivers thinner than half a fine cell into the fine zone
    if fine_lo - lo < 0.5 * fine_h:
        fine_lo = lo
    if hi - fine_hi < 0.5 * fine_h:
        fine_hi = hi
    n_fine = max(1, math.ceil((fine_hi - fine_lo) / fine_h - 1e-9))
    middle = np.linspace(fine_lo, fine_hi, n_fine + 1)
    upper = fine_hi + _graded_run(hi - fine_hi, fine_h, coarse_h, grading)
    lower = fine_lo - _graded_run(fine_lo - lo, fine_h, coarse_h, grading)[::-1]
    return np.concatenate([lower, middle, upper])


def _kuhn_tets(nx: int, ny: int, nz: int) -> np.ndarray:
    """Six tets per hexahedral cell, all sharing the cell's main diagonal"""
    sx, sy = nx + 1, (nx + 1) * (ny + 1)
    step = np.array([1, sx, sy], dtype=np.int64)
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = (i + sx * j + sy * k).reshape(-1).astype(np.int64)
    blocks = []
    for perm in permutations(range(3)):
        v0 = base
        v1 = v0 + step[perm[0]]
        v2 = v1 + step[perm[1]]
        v3 = v2 + step[perm[2]]
        blocks.append(np.stack([v0, v1, v2, v3], axis=1))
    # cell-major ordering keeps the six tets of a cell together
    return np.stack(blocks, axis=1).reshape(-1, 4)


def _boundary_faces(nodes: np.ndarray, tets: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    faces, counts = face_incidence(tets)
    boundary = faces[counts == 1]
    tags = np.zeros(len(boundary), dtype=np.int64)
    coords = nodes[boundary]
    scale = float(np.max(hi - lo))
    for axis in range(3):
        for side, value in enumerate((lo[axis], hi[axis])):
            on_plane = np.all(np.abs(coords[:, :, axis] - value) <= 1e-12 * scale, axis=1)
            tags[on_plane & (tags == 0)] = BOUNDARY_TAGS[(axis, side)]
    return boundary, tags


def generate_box_mesh(
    outer: GeometryPrimitive,
    inner: GeometryPrimitive,
    coarse_h: float,
    fine_h: float,
    refine_margin: Optional[float] = None,
    grading: float = 1.3,
    max_elements: Optional[int] = None,
) -> Mesh:
    """Structured tet mesh of the outer box, graded toward the inner primitive.

    Cells inside the inner primitive's bounding box widened by
    `refine_margin` (default 2 * coarse_h) have spacing <= fine_h; spacing
    then grows by `grading` per cell up to coarse_h. Equal sizes give a
    uniform grid. Each cell is split into six tets.
    """
    if outer.kind != PrimitiveKind.BOX:
        raise GeometryError("outer primitive must be a box")
    if not (fine_h > 0) or not (coarse_h > 0):
        raise GeometryError(f"mesh sizes must be positive (fine_h={fine_h}, coarse_h={coarse_h})")
    if fine_h > coarse_h:
        raise GeometryError("fine_h must not exceed coarse_h")
    if not outer.strictly_contains(inner):
        raise GeometryError("inner primitive is not contained in the outer box")
    if not (1.0 < grading <= 1.5):
        raise GeometryError("grading must lie in (1, 1.5]")

    max_elements = max_elements or settings.max_elements
    margin = 2.0 * coarse_h if refine_margin is None else refine_margin
    lo, hi = outer.bounds()
    ilo, ihi = inner.bounds()

    # cheap estimate first, so absurd sizes fail before allocation
    estimate = 6.0
    for axis in range(3):
        fine_len = min(hi[axis], ihi[axis] + margin) - max(lo[axis], ilo[axis] - margin)
        estimate *= max(1.0, fine_len / fine_h)
    if estimate > max_elements:
        raise ResourceError(
            f"fine_h={fine_h} needs about {estimate:.3g} elements, budget is {max_elements}"
        )

    axes = [
        _axis_coordinates(
            lo[a], hi[a], ilo[a] - margin, ihi[a] + margin, coarse_h, fine_h, grading
        )
        for a in range(3)
    ]
    nx, ny, nz = (len(ax) - 1 for ax in axes)
    if 6 * nx * ny * nz > max_elements:
        raise ResourceError(
            f"mesh needs {6 * nx * ny * nz} elements, budget is {max_elements}"
        )

    x, y, z = np.meshgrid(*axes, indexing="ij")
    # node id = i + (nx+1) * (j + (ny+1) * k)
    nodes = np.stack(
        [c.transpose(2, 1, 0).reshape(-1) for c in (x, y, z)],
        axis=1,
    )
    tets = _kuhn_tets(nx, ny, nz)
    faces, tags = _boundary_faces(nodes, tets, lo, hi)
    mesh = Mesh.build(nodes, tets, faces, tags)
    logger.info(
        f"Generated mesh: {mesh.num_nodes} nodes, {mesh.num_tets} tets, "
        f"grid {nx}x{ny}x{nz}, min edge {mesh.min_edge_h:.4g} mm"
    )
    return mesh
