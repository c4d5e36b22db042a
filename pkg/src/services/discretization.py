"""Subdomain-local discretization.

Every worker holds a LocalDomain: the submesh of all elements touching its
subdomain nodes. Rows of the subdomain nodes assembled on that submesh are
the rows of the global system, so each worker builds its own row block and
its A_i without the global matrix ever being formed. The orchestrator only
combines per-worker reductions.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.models import SolverConfig, SolveStats
from src.services.decomp import OverlapDecomposition, Subdomain, build_overlap, partition_mesh
from src.services.fem import Assembler, AssembledSystem, AssemblyInput, PenaltySet
from src.services.linsolve import DistributedSystem, LocalOperator, gather_owned, store_operator
from src.services.mesh import Mesh
from src.services.workers import InlinePool, WorkerPool, handler, reraise
from src.utils import WorkerError, logger


@dataclass(eq=False)
class LocalDomain:
    """One worker's piece of the mesh, with index maps into it.

    `nodes` is the global index of each submesh node (ascending),
    `subdomain` the submesh positions of the subdomain nodes (R_i), `owned`
    the positions within `subdomain` of the nodes this worker owns and
    `core` the submesh indices of its non-ghost elements. `global_mesh` is
    kept for point location across subdomain borders.
    """

    rank: int
    mesh: Mesh
    nodes: np.ndarray
    subdomain: np.ndarray
    owned: np.ndarray
    core: np.ndarray
    global_mesh: Mesh
    staged: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, mesh: Mesh, sub: Subdomain) -> "LocalDomain":
        # every element touching a subdomain node, so subdomain rows are complete
        elements = np.unique(mesh.node_elements[sub.nodes].indices)
        local_mesh, nodes = mesh.submesh(elements)
        return cls(
            rank=sub.rank,
            mesh=local_mesh,
            nodes=nodes,
            subdomain=np.searchsorted(nodes, sub.nodes),
            owned=np.flatnonzero(sub.owned),
            core=np.searchsorted(elements, sub.core_elements),
            global_mesh=mesh,
        )

    @property
    def owned_rows(self) -> np.ndarray:
        """Submesh positions of the owned nodes"""
        return self.subdomain[self.owned]

    @cached_property
    def assembler(self) -> Assembler:
        return Assembler(self.mesh)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("assembler", None)
        state["staged"] = {}
        return state

    def stage(
        self, key: str, system: AssembledSystem, penalty: Optional[PenaltySet] = None
    ) -> float:
        """Keep an unpenalized local system until the global penalty scale is known.

        Returns the largest diagonal entry over the owned rows.
        """
        self.staged[key] = (system, penalty)
        diagonal = self.assembler.diagonal(system)[self.owned_rows]
        return float(diagonal.max()) if len(diagonal) else 0.0

    def prepare(
        self, key: str, reference_diagonal: float, config: SolverConfig
    ) -> Tuple[np.ndarray, LocalOperator]:
        """Penalize, scale the penalty rows and split the staged system for solving"""
        system, penalty = self.staged.pop(key)
        if penalty is not None and len(penalty.nodes):
            system = self.assembler.add_penalty(system, penalty, reference_diagonal)
        system = system.scaled_penalty_rows()
        operator = LocalOperator.build(
            system.matrix, self.subdomain, self.owned, config, self.rank, index=self.nodes
        )
        return system.rhs[self.owned_rows], operator


@handler("assemble")
def _assemble(state, key, dt, lump, diffusion, alpha, source, previous, pinned, targets, weight):
    """Reaction-diffusion system on the worker's submesh"""
    domain: LocalDomain = state["context"]
    nodes = np.flatnonzero(pinned)
    penalty = PenaltySet(nodes, targets[nodes], weight) if len(nodes) else None
    inp = AssemblyInput(
        mesh=domain.mesh,
        dt=dt,
        diffusion=diffusion,
        alpha=alpha,
        source=source,
        previous=previous,
        lump=lump,
    )
    return domain.stage(key, domain.assembler.assemble(inp), penalty)


@handler("prepare")
def _prepare(state, key, reference, config):
    domain: LocalDomain = state["context"]
    rhs, operator = domain.prepare(key, reference, config)
    return rhs, store_operator(state, key, operator)


@dataclass(eq=False)
class Discretization:
    """Everything a PDE step needs: mesh, decomposition, local domains and workers"""

    mesh: Mesh
    decomp: OverlapDecomposition
    domains: List[LocalDomain]
    pool: object

    @classmethod
    def build(
        cls,
        mesh: Mesh,
        workers: int = 1,
        overlap: int = 1,
        seed: int = 0,
        parallel: bool = True,
    ) -> "Discretization":
        decomp = build_overlap(mesh, partition_mesh(mesh, workers, seed), overlap)
        domains = [LocalDomain.build(mesh, sub) for sub in decomp.subdomains]
        logger.debug(
            "Local domains: "
            + ", ".join(
                f"rank {d.rank}: {d.mesh.num_nodes} nodes, "
                f"{len(sub.ghost_nodes)} ghost"
                for d, sub in zip(domains, decomp.subdomains)
            )
        )
        pool_cls = WorkerPool if parallel and workers > 1 else InlinePool
        return cls(mesh, decomp, domains, pool_cls(workers, domains, vector_size=mesh.num_nodes))

    @property
    def workers(self) -> int:
        return self.decomp.num_subdomains

    @cached_property
    def assembler(self) -> Assembler:
        """Global assembler, for conservation checks and debug exports"""
        return Assembler(self.mesh)

    def start(self) -> None:
        self.pool.start()

    def stop(self) -> None:
        self.pool.stop()

    def __enter__(self) -> "Discretization":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()

    def scatter_fields(self, op: str, fields: Dict[str, np.ndarray], **common: Any) -> List[Any]:
        """Send each worker its submesh restriction of the nodal `fields`, plus `common`"""
        payloads = []
        for domain in self.domains:
            payload = {name: np.asarray(values)[domain.nodes] for name, values in fields.items()}
            payload.update(common)
            payloads.append(payload)
        try:
            return self.pool.scatter(op, payloads)
        except WorkerError as e:
            reraise(e)

    def broadcast(self, op: str, **payload: Any) -> List[Any]:
        try:
            return self.pool.broadcast(op, **payload)
        except WorkerError as e:
            reraise(e)

    @staticmethod
    def ordered_sum(parts) -> float:
        """Sum of per-worker partials in rank order"""
        total = 0.0
        for part in parts:
            total += part
        return total

    def assemble_staged(
        self, op: str, fields: Dict[str, np.ndarray], config: SolverConfig, key: str, **common: Any
    ) -> DistributedSystem:
        """Run assembly op `op` on every worker, then penalize and split the results"""
        reference = max(self.scatter_fields(op, fields, key=key, **common))
        parts = self.broadcast("prepare", key=key, reference=reference, config=config)
        rhs = gather_owned(self.decomp, [rhs for rhs, _ in parts])
        diagonal = gather_owned(self.decomp, [diag for _, diag in parts])
        return DistributedSystem(self.decomp, self.pool, key, diagonal, rhs)

    def assemble(self, inp: AssemblyInput, config: SolverConfig, key: str) -> DistributedSystem:
        """Reaction-diffusion system of `inp`, assembled by the workers"""
        inp.validate()
        n = self.mesh.num_nodes
        pinned = np.zeros(n, dtype=bool)
        targets = np.zeros(n)
        weight = 0.0
        if inp.penalty is not None and len(inp.penalty.nodes):
            pinned[inp.penalty.nodes] = True
            targets[inp.penalty.nodes] = inp.penalty.target_values()
            weight = inp.penalty.weight
        fields = {
            "diffusion": inp.diffusion,
            "alpha": inp.alpha,
            "source": inp.source,
            "previous": inp.previous,
            "pinned": pinned,
            "targets": targets,
        }
        return self.assemble_staged(
            "assemble", fields, config, key, dt=inp.dt, lump=inp.lump, weight=weight
        )

    def solve(
        self,
        inp: AssemblyInput,
        config: SolverConfig,
        x0: Optional[np.ndarray] = None,
        name: str = "",
    ) -> Tuple[np.ndarray, SolveStats]:
        system = self.assemble(inp, config, key=name or "default")
        return system.solve(config, x0=x0, name=name)
