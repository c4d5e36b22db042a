"""P1 finite-element assembly of the backward-Euler reaction-diffusion system.

    A = M + dt * diag(alpha) * K[D]
    b = diag(alpha) * M * (u_prev + dt * f)

with M consistent or row-sum lumped, K[D] the stiffness matrix weighted by
the element average of the nodal diffusion field, and optional penalty rows
pinning selected nodes to a target value. No-flux boundaries are natural.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from src.services.mesh import Mesh, TET_EDGES
from src.utils import AssemblyError, DegenerateElementError

REFERENCE_MASS = (np.ones((4, 4)) + np.eye(4)) / 20.0


def element_matrices(coords) -> tuple[np.ndarray, np.ndarray]:
    """Local (mass, stiffness) 4x4 matrices of one tet given its vertex coordinates"""
    p = np.asarray(coords, dtype=np.float64).reshape(4, 3)
    jac = np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]])
    vol = np.linalg.det(jac) / 6.0
    longest = max(np.linalg.norm(p[b] - p[a]) for a, b in TET_EDGES)
    if abs(vol) <= 1e-14 * longest**3:
        raise AssemblyError("degenerate tet (zero volume)")
    vol = abs(vol)
    grads = np.empty((4, 3))
    grads[1:] = np.linalg.inv(jac).T
    grads[0] = -grads[1:].sum(axis=0)
    return vol * REFERENCE_MASS, vol * grads @ grads.T


def mass_kernels(mesh: Mesh) -> np.ndarray:
    return mesh.volumes[:, None, None] * REFERENCE_MASS


def stiffness_kernels(mesh: Mesh, diffusion: Optional[np.ndarray] = None) -> np.ndarray:
    """Element stiffness blocks, each scaled by the mean of its nodal diffusion values"""
    weight = mesh.volumes
    if diffusion is not None:
        weight = weight * np.asarray(diffusion)[mesh.tets].mean(axis=1)
    return weight[:, None, None] * np.einsum("eai,ebi->eab", mesh.gradients, mesh.gradients)


def lump_mass(mass: sp.spmatrix) -> np.ndarray:
    """Row-sum lumping"""
    lumped = np.asarray(mass.sum(axis=1)).reshape(-1)
    if np.any(lumped <= 0):
        bad = int(np.flatnonzero(lumped <= 0)[0])
        raise DegenerateElementError(f"non-positive lumped mass at node {bad}")
    return lumped


@dataclass
class PenaltySet:
    """Nodes pinned to `targets` by a penalty of weight x max diagonal of A"""

    nodes: np.ndarray
    targets: Union[float, np.ndarray]
    weight: float = 1e10

    def target_values(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.targets, dtype=np.float64), self.nodes.shape)


@dataclass
class AssemblyInput:
    mesh: Mesh
    dt: float
    diffusion: np.ndarray
    alpha: np.ndarray
    source: np.ndarray
    previous: np.ndarray
    penalty: Optional[PenaltySet] = None
    lump: bool = False

    def validate(self) -> None:
        n = self.mesh.num_nodes
        if not (self.dt > 0):
            raise AssemblyError(f"dt must be positive, got {self.dt}")
        for name in ("diffusion", "alpha", "source", "previous"):
            value = np.asarray(getattr(self, name))
            if value.shape != (n,):
                raise AssemblyError(f"{name} has shape {value.shape}, expected ({n},)")
            if not np.all(np.isfinite(value)):
                raise AssemblyError(f"{name} contains NaN or inf")
        if np.any(self.diffusion < 0):
            raise AssemblyError("diffusion must be non-negative")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise AssemblyError("alpha must lie in (0, 1]")
        if self.penalty is not None:
            nodes = np.asarray(self.penalty.nodes)
            if len(nodes) and (nodes.min() < 0 or nodes.max() >= n):
                raise AssemblyError("penalty node out of range")
            if not np.all(np.isfinite(self.penalty.target_values())):
                raise AssemblyError("penalty target contains NaN or inf")


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    penalty_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def scaled_penalty_rows(self) -> "AssembledSystem":
        """Equivalent system with every penalty row divided by its diagonal.

        Penalty rows then read x_k ~ target, so their round-off no longer
        swamps the residual norm of the free rows.
        """
        if not len(self.penalty_nodes):
            return self
        n = self.matrix.shape[0]
        scale = np.ones(n)
        scale[self.penalty_nodes] = 1.0 / self.matrix.diagonal()[self.penalty_nodes]
        rows = np.repeat(np.arange(n), np.diff(self.matrix.indptr))
        matrix = sp.csr_matrix(
            (self.matrix.data * scale[rows], self.matrix.indices.copy(), self.matrix.indptr.copy()),
            shape=self.matrix.shape,
        )
        return AssembledSystem(matrix, scale * self.rhs, self.penalty_nodes)


class Assembler:
    """Fixed P1 sparsity pattern of a mesh, with the constant mass matrices.

    Element blocks are scattered by a precomputed index map, and duplicate
    contributions are summed in element order, so the assembled values do
    not depend on which worker produced which block.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n = mesh.num_nodes
        rows = np.repeat(mesh.tets, 4, axis=1).reshape(-1)
        cols = np.tile(mesh.tets, (1, 4)).reshape(-1)
        keys = rows * n + cols
        unique, self._scatter = np.unique(keys, return_inverse=True)
        self._indices = (unique % n).astype(np.int32)
        self._indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(unique // n, minlength=n), out=self._indptr[1:])
        self._diag = np.searchsorted(unique, np.arange(n) * n + np.arange(n))
        self._row_of_entry = np.repeat(np.arange(n), np.diff(self._indptr))

        self.mass = self.from_kernels(mass_kernels(mesh))
        self.lumped_mass = lump_mass(self.mass)
        self._lumped_data = np.zeros(self.nnz)
        self._lumped_data[self._diag] = self.lumped_mass

    @property
    def nnz(self) -> int:
        return len(self._indices)

    def _csr(self, data: np.ndarray) -> sp.csr_matrix:
        n = self.mesh.num_nodes
        # explicit zeros are kept so every operator shares one pattern
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(n, n))

    def from_kernels(self, kernels: np.ndarray) -> sp.csr_matrix:
        """CSR matrix of summed element blocks, one (4, 4) block per mesh element"""
        return self._csr(self._sum_kernels(kernels))

    def _sum_kernels(self, kernels: np.ndarray) -> np.ndarray:
        return np.bincount(self._scatter, weights=kernels.reshape(-1), minlength=self.nnz)

    def stiffness(self, diffusion: Optional[np.ndarray] = None) -> sp.csr_matrix:
        return self.from_kernels(stiffness_kernels(self.mesh, diffusion))

    def mass_operator(self, lump: bool) -> sp.csr_matrix:
        """Mass matrix on the full pattern, diagonal when lumped"""
        if not lump:
            return self.mass
        return self._csr(self._lumped_data.copy())

    def assemble(self, inp: AssemblyInput) -> AssembledSystem:
        """Assemble A and b.

        The penalty is `weight` times the largest diagonal entry of the
        unpenalized A.
        """
        inp.validate()
        stiffness = stiffness_kernels(self.mesh, inp.diffusion)
        alpha = np.asarray(inp.alpha, dtype=np.float64)
        mass = self._lumped_data if inp.lump else self.mass.data

        data = mass + inp.dt * alpha[self._row_of_entry] * self._sum_kernels(stiffness)
        rhs = alpha * (self.mass_operator(inp.lump) @ (inp.previous + inp.dt * inp.source))
        system = AssembledSystem(self._csr(data), rhs)
        if inp.penalty is None or not len(inp.penalty.nodes):
            return system
        return self.add_penalty(system, inp.penalty, float(data[self._diag].max()))

    def add_penalty(
        self, system: AssembledSystem, penalty: PenaltySet, reference_diagonal: float
    ) -> AssembledSystem:
        """Pin penalty.nodes: diagonal and rhs grow by weight * reference_diagonal"""
        nodes = np.asarray(penalty.nodes, dtype=np.int64)
        value = penalty.weight * reference_diagonal
        data = system.matrix.data.copy()
        data[self._diag[nodes]] += value
        rhs = system.rhs.copy()
        rhs[nodes] += value * penalty.target_values()
        return AssembledSystem(self._csr(data), rhs, nodes)

    def diagonal(self, system: AssembledSystem) -> np.ndarray:
        return system.matrix.data[self._diag]


def assemble_system(inp: AssemblyInput) -> AssembledSystem:
    return Assembler(inp.mesh).assemble(inp)


def element_gradients(
    mesh: Mesh, values: np.ndarray, elements: Optional[np.ndarray] = None
) -> np.ndarray:
    """Constant P1 gradient of a nodal field on every element (or on `elements`), shape (m, 3)"""
    if elements is None:
        return np.einsum("ea,eai->ei", np.asarray(values)[mesh.tets], mesh.gradients)
    return np.einsum(
        "ea,eai->ei", np.asarray(values)[mesh.tets[elements]], mesh.gradients[elements]
    )

