"""Domain decomposition: coordinate-bisection partitioning, overlap layers and
the Boolean partition of unity used by the Schwarz preconditioner."""

from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.services.mesh import Mesh
from src.utils import ConformanceError, PartitionError, logger


@dataclass(frozen=True, eq=False)
class Partition:
    part_of_element: np.ndarray
    num_parts: int

    def elements_of(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.part_of_element == part)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.part_of_element, minlength=self.num_parts)

    def imbalance(self) -> float:
        """Largest relative deviation of a part size from the mean"""
        sizes = self.sizes()
        mean = sizes.mean()
        return float(np.abs(sizes - mean).max() / mean)


@dataclass(eq=False)
class Subdomain:
    """One overlapping subdomain.

    `nodes` is the restriction map R_i (global index of each local node,
    ascending) and `weights` the partition-of-unity diagonal D_i.
    """

    rank: int
    elements: np.ndarray
    is_ghost_element: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    owned: np.ndarray
    local_tets: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def ghost_nodes(self) -> np.ndarray:
        """Local indices of nodes owned by another subdomain"""
        return np.flatnonzero(~self.owned)

    @property
    def owned_nodes(self) -> np.ndarray:
        """Global indices of the nodes this subdomain owns"""
        return self.nodes[self.owned]

    @property
    def core_elements(self) -> np.ndarray:
        return self.elements[~self.is_ghost_element]

    def restrict(self, global_vector: np.ndarray) -> np.ndarray:
        return global_vector[self.nodes]


@dataclass(eq=False)
class OverlapDecomposition:
    mesh: Mesh
    partition: Partition
    overlap: int
    owner: np.ndarray
    subdomains: List[Subdomain] = field(default_factory=list)

    @property
    def num_subdomains(self) -> int:
        return len(self.subdomains)

    @property
    def num_nodes(self) -> int:
        return self.mesh.num_nodes

    @cached_property
    def owned_sets(self) -> List[np.ndarray]:
        """Global owned-node index sets in rank order; they tile the node range"""
        return [s.owned_nodes for s in self.subdomains]

    def restrict(self, global_vector: np.ndarray) -> List[np.ndarray]:
        global_vector = np.asarray(global_vector)
        if global_vector.shape[0] != self.num_nodes:
            raise ConformanceError(
                f"vector has {global_vector.shape[0]} entries, mesh has {self.num_nodes} nodes"
            )
        return [s.restrict(global_vector) for s in self.subdomains]


def partition_mesh(mesh: Mesh, num_parts: int, seed: int = 0) -> Partition:
    """Recursive coordinate bisection of element centroids.

    Each cut runs across the longest extent of the current element set and
    splits it in proportion to the number of parts on either side; ties in
    the cut coordinate are broken by a seeded random key.
    """
    if num_parts < 1:
        raise PartitionError(f"number of subdomains must be >= 1, got {num_parts}")
    if num_parts > mesh.num_tets:
        raise PartitionError(
            f"cannot split {mesh.num_tets} elements into {num_parts} subdomains"
        )

    centroids = mesh.centroids
    tiebreak = np.random.default_rng(seed).permutation(mesh.num_tets)
    part = np.zeros(mesh.num_tets, dtype=np.int64)

    stack: List[Tuple[np.ndarray, int, int]] = [(np.arange(mesh.num_tets), num_parts, 0)]
    while stack:
        elements, k, first = stack.pop()
        if k == 1:
            part[elements] = first
            continue
        pts = centroids[elements]
        axis = int(np.argmax(np.ptp(pts, axis=0)))
        order = np.lexsort((tiebreak[elements], pts[:, axis]))
        k_left = k // 2
        n_left = len(elements) * k_left // k
        stack.append((elements[order[n_left:]], k - k_left, first + k_left))
        stack.append((elements[order[:n_left]], k_left, first))

    partition = Partition(part, num_parts)
    logger.debug(
        f"Partitioned {mesh.num_tets} elements into {num_parts} parts "
        f"(imbalance {partition.imbalance():.3f})"
    )
    return partition


def _grow(mesh: Mesh, element_mask: np.ndarray, layers: int) -> np.ndarray:
    incidence = mesh.node_elements
    mask = element_mask
    for _ in range(layers):
        node_mask = (incidence @ mask.astype(np.int64)) > 0
        mask = (incidence.T @ node_mask.astype(np.int64)) > 0
    return mask


def build_overlap(mesh: Mesh, partition: Partition, overlap: int = 1) -> OverlapDecomposition:
    """Extend each part by `overlap` layers of node-adjacent elements.

    Every node is owned by the lowest-numbered part whose elements touch it;
    the owner's weight is 1 and every other copy weighs 0, so the weighted
    sum over subdomains reproduces any restricted vector exactly.
    """
    if overlap < 0:
        raise PartitionError(f"overlap must be >= 0, got {overlap}")
    n_parts = partition.num_parts
    part = partition.part_of_element

    owner = np.full(mesh.num_nodes, n_parts, dtype=np.int64)
    np.minimum.at(owner, mesh.tets.reshape(-1), np.repeat(part, 4))

    subdomains = []
    for rank in range(n_parts):
        core = part == rank
        mask = _grow(mesh, core, overlap)
        elements = np.flatnonzero(mask)
        nodes = np.unique(mesh.tets[elements])
        owned = owner[nodes] == rank
        subdomains.append(
            Subdomain(
                rank=rank,
                elements=elements,
                is_ghost_element=~core[elements],
                nodes=nodes,
                weights=owned.astype(np.float64),
                owned=owned,
                local_tets=np.searchsorted(nodes, mesh.tets[elements]),
            )
        )

    decomp = OverlapDecomposition(mesh, partition, overlap, owner, subdomains)
    sizes = [s.size for s in subdomains]
    logger.info(
        f"Decomposition: {n_parts} subdomains, overlap {overlap}, "
        f"local sizes {min(sizes)}..{max(sizes)} nodes"
    )
    return decomp


def assemble_global_from_local(
    decomp: OverlapDecomposition,
    local_vectors: Sequence[np.ndarray],
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sum_i R_i^T D_i u_i over subdomains in rank order"""
    if len(local_vectors) != decomp.num_subdomains:
        raise ConformanceError(
            f"got {len(local_vectors)} local vectors for {decomp.num_subdomains} subdomains"
        )
    if out is None:
        out = np.zeros(decomp.num_nodes)
    else:
        out[:] = 0.0
    for sub, local in zip(decomp.subdomains, local_vectors):
        local = np.asarray(local)
        if local.shape[0] != sub.size:
            raise ConformanceError(
                f"subdomain {sub.rank}: vector has {local.shape[0]} entries, expected {sub.size}"
            )
        out[sub.nodes] += sub.weights * local
    return out
