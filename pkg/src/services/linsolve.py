"""Restarted GMRES with Jacobi or Restricted Additive Schwarz preconditioning.

The preconditioner is applied from the right, so the residual the solver
monitors is the residual of the original system. With a decomposition, the
operator and the preconditioner are applied by the subdomain workers and
every inner product is a rank-ordered sum of per-subdomain partials.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.models import LocalSolverKind, PreconditionerKind, SolverConfig, SolveStats
from src.services.decomp import OverlapDecomposition
from src.services.workers import handler, reraise
from src.utils import (
    ConformanceError,
    NonConvergenceError,
    SingularSystemError,
    SubdomainSolveError,
    WorkerError,
    logger,
)

Dot = Callable[[np.ndarray, np.ndarray], float]

# relative size of the new Arnoldi direction below which the Krylov space is exhausted
BREAKDOWN_RTOL = 1e-13


class OrderedDot:
    """Inner product summed over owned index sets in rank order"""

    def __init__(self, index_sets: Sequence[np.ndarray]):
        self.index_sets = list(index_sets)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        total = 0.0
        for idx in self.index_sets:
            total += float(np.dot(x[idx], y[idx]))
        return total


def _default_dot(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.dot(x, y))


def _givens(a: float, b: float) -> Tuple[float, float, float]:
    if b == 0.0:
        return 1.0, 0.0, a
    r = math.hypot(a, b)
    return a / r, b / r, r


def gmres_solve(
    A,
    b: np.ndarray,
    M=None,
    config: SolverConfig = SolverConfig(),
    x0: Optional[np.ndarray] = None,
    reference_norm: Optional[float] = None,
    dot: Optional[Dot] = None,
    name: str = "",
) -> Tuple[np.ndarray, SolveStats]:
    """Solve A x = b with right-preconditioned restarted GMRES(m).

    Converged when ||b - A x|| <= max(rel_tol * ref, abs_tol), where ref is
    `reference_norm` if given and ||b|| otherwise. The check uses the true
    residual recomputed at the end of each restart cycle.
    """
    start = time.perf_counter()
    A = spla.aslinearoperator(A)
    M = spla.aslinearoperator(M) if M is not None else None
    dot = dot or _default_dot
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if A.shape != (n, n):
        raise SingularSystemError(f"operator shape {A.shape} does not match rhs of size {n}")

    def norm(v: np.ndarray) -> float:
        return math.sqrt(max(dot(v, v), 0.0))

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    ref = norm(b) if reference_norm is None else reference_norm
    tol = max(config.rel_tol * ref, config.abs_tol)
    m = config.restart

    r = b - A.matvec(x)
    beta = norm(r)
    best_x, best_res = x.copy(), beta
    iterations = 0
    history: List[float] = [beta]

    def stats(converged: bool) -> SolveStats:
        return SolveStats(
            iterations=iterations,
            residual=best_res if not converged else beta,
            wall_time=time.perf_counter() - start,
            converged=converged,
            history=history,
        )

    while beta > tol:
        if iterations >= config.max_iters:
            raise NonConvergenceError(
                f"{name or 'gmres'}: no convergence in {iterations} iterations "
                f"(residual {best_res:.3e}, target {tol:.3e})",
                x=best_x,
                stats=stats(False),
            )
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        history = [beta]
        exhausted = False
        k = 0
        for j in range(m):
            z = M.matvec(V[j]) if M is not None else V[j]
            w = A.matvec(z)
            iterations += 1
            w_norm = norm(w)
            # modified Gram-Schmidt
            for i in range(j + 1):
                H[i, j] = dot(w, V[i])
                w = w - H[i, j] * V[i]
            h_next = norm(w)
            H[j + 1, j] = h_next
            for i in range(j):
                H[i, j], H[i + 1, j] = (
                    cs[i] * H[i, j] + sn[i] * H[i + 1, j],
                    -sn[i] * H[i, j] + cs[i] * H[i + 1, j],
                )
            cs[j], sn[j], H[j, j] = _givens(H[j, j], H[j + 1, j])
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            history.append(abs(g[j + 1]))
            k = j + 1

            if H[j, j] == 0.0:
                raise SingularSystemError(
                    f"{name or 'gmres'}: breakdown, operator maps a Krylov direction to zero"
                )
            exhausted = h_next <= BREAKDOWN_RTOL * max(w_norm, np.finfo(float).tiny)
            if abs(g[j + 1]) <= tol or exhausted or iterations >= config.max_iters:
                break
            V[j + 1] = w / h_next

        y = la.solve_triangular(H[:k, :k], g[:k])
        update = V[:k].T @ y
        if M is not None:
            update = M.matvec(update)
        x = x + update
        r = b - A.matvec(x)
        beta = norm(r)
        if beta < best_res:
            best_x, best_res = x.copy(), beta
        if beta > tol and exhausted:
            raise SingularSystemError(
                f"{name or 'gmres'}: Krylov space exhausted with residual {beta:.3e} "
                f"above target {tol:.3e}; system is singular or inconsistent"
            )

    result = stats(True)
    logger.info(
        f"pde={name or 'system'} iters={result.iterations} "
        f"resid={result.residual:.3e} t={result.wall_time:.4f}"
    )
    return x, result


class JacobiPreconditioner(spla.LinearOperator):
    """diag(A)^-1, from a matrix or from its diagonal vector"""

    def __init__(self, A):
        if sp.issparse(A):
            diag = A.diagonal()
        else:
            diag = np.asarray(A)
            if diag.ndim == 2:
                diag = np.diagonal(diag)
        diag = np.asarray(diag, dtype=np.float64)
        if np.any(diag == 0):
            raise SingularSystemError(
                f"Jacobi preconditioner: zero diagonal at row {int(np.flatnonzero(diag == 0)[0])}"
            )
        self.inv_diag = 1.0 / diag
        super().__init__(dtype=np.float64, shape=(len(diag), len(diag)))

    def _matvec(self, x):
        return self.inv_diag * np.ravel(x)


class LocalSolver:
    """Approximate inverse of one subdomain matrix A_i"""

    def solve(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DenseLU(LocalSolver):
    def __init__(self, matrix: sp.spmatrix):
        dense = matrix.toarray()
        self.lu, self.piv = la.lu_factor(dense, check_finite=True)
        pivots = np.abs(np.diag(self.lu))
        scale = max(float(np.abs(dense).max()), np.finfo(float).tiny)
        if pivots.min() <= 1e-14 * scale:
            raise la.LinAlgError("zero pivot in dense LU")

    def solve(self, r: np.ndarray) -> np.ndarray:
        return la.lu_solve((self.lu, self.piv), r)


class IncompleteLU(LocalSolver):
    """ILU(0)-like factorization applied as a fixed number of Richardson sweeps.

    A fixed sweep count keeps the local operator linear, as the outer GMRES
    requires of its preconditioner.
    """

    def __init__(self, matrix: sp.spmatrix, sweeps: int = 2):
        self.matrix = sp.csc_matrix(matrix)
        self.sweeps = sweeps
        self.ilu = spla.spilu(self.matrix, drop_tol=0.0, fill_factor=1.0)

    def solve(self, r: np.ndarray) -> np.ndarray:
        x = self.ilu.solve(r)
        for _ in range(self.sweeps - 1):
            x = x + self.ilu.solve(r - self.matrix @ x)
        return x


class SparseLU(LocalSolver):
    def __init__(self, matrix: sp.spmatrix):
        self.lu = spla.splu(sp.csc_matrix(matrix))

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self.lu.solve(r)


def make_local_solver(
    matrix: sp.spmatrix,
    kind: LocalSolverKind,
    dense_threshold: int = 2000,
    sweeps: int = 2,
) -> LocalSolver:
    kind = LocalSolverKind(kind)
    if kind == LocalSolverKind.SPARSE_LU:
        return SparseLU(matrix)
    if kind == LocalSolverKind.DENSE_LU and matrix.shape[0] <= dense_threshold:
        return DenseLU(matrix)
    return IncompleteLU(matrix, sweeps)


@dataclass(eq=False)
class LocalOperator:
    """One worker's share of a distributed system.

    `block` holds the owned rows restricted to the columns they touch, and
    `solver` the factored subdomain matrix A_i when RAS is configured. All
    index arrays are global.
    """

    rows: np.ndarray
    columns: np.ndarray
    block: sp.csr_matrix
    nodes: np.ndarray
    keep: np.ndarray
    diagonal: np.ndarray
    solver: Optional[LocalSolver] = None

    @classmethod
    def build(
        cls,
        matrix,
        subdomain: np.ndarray,
        owned: np.ndarray,
        config: SolverConfig,
        rank: int,
        index: Optional[np.ndarray] = None,
    ) -> "LocalOperator":
        """Split `matrix` for one worker.

        `subdomain` lists the matrix positions of the subdomain nodes,
        `owned` the positions within `subdomain` of the owned nodes, and
        `index` the global node of each matrix position (identity if None).
        """
        matrix = sp.csr_matrix(matrix)
        if index is None:
            index = np.arange(matrix.shape[0])
        rows = subdomain[owned]
        block = matrix[rows]
        columns = np.unique(block.indices)
        solver = None
        if PreconditionerKind(config.preconditioner) == PreconditionerKind.RAS:
            local = matrix[subdomain][:, subdomain]
            try:
                solver = make_local_solver(
                    local, config.ras_local_solver, config.dense_threshold, config.ilu_sweeps
                )
            except (RuntimeError, ValueError, la.LinAlgError) as e:
                raise SubdomainSolveError(f"local factorization failed: {e}", rank)
        return cls(
            rows=index[rows],
            columns=index[columns],
            block=block[:, columns],
            nodes=index[subdomain],
            keep=owned,
            diagonal=matrix.diagonal()[rows],
            solver=solver,
        )

    def apply(self, x: np.ndarray, out: np.ndarray) -> None:
        out[self.rows] = self.block @ x[self.columns]

    def precondition(self, r: np.ndarray, out: np.ndarray) -> None:
        out[self.rows] = self.solver.solve(r[self.nodes])[self.keep]


def store_operator(state, key: str, operator: LocalOperator) -> np.ndarray:
    state.setdefault("operators", {})[key] = operator
    return operator.diagonal


@handler("load")
def _load(state, key, matrix, subdomain, owned, config):
    operator = LocalOperator.build(matrix, subdomain, owned, config, state["rank"])
    return store_operator(state, key, operator)


@handler("matvec")
def _matvec(state, key):
    vectors = state["vectors"]
    state["operators"][key].apply(vectors["input"], vectors["output"])


@handler("ras_apply")
def _ras_apply(state, key):
    vectors = state["vectors"]
    state["operators"][key].precondition(vectors["input"], vectors["output"])


class DistributedSystem:
    """A linear system whose rows live on the workers under `key`.

    Every node row is owned by exactly one worker, so the owned rows the
    workers write into the shared output vector tile it without overlap.
    """

    def __init__(
        self,
        decomp: OverlapDecomposition,
        pool,
        key: str,
        diagonal: np.ndarray,
        rhs: Optional[np.ndarray] = None,
    ):
        self.decomp = decomp
        self.pool = pool
        self.key = key
        self.diagonal = diagonal
        self.rhs = rhs
        n = decomp.num_nodes
        if pool.vectors.size != n:
            raise ConformanceError(
                f"worker vectors hold {pool.vectors.size} entries, system has {n} rows"
            )

    @classmethod
    def load(
        cls,
        A,
        decomp: OverlapDecomposition,
        pool,
        config: SolverConfig = SolverConfig(),
        key: str = "default",
    ) -> "DistributedSystem":
        """Distribute an assembled global matrix: each worker slices its own rows and A_i"""
        payloads = [
            {
                "key": key,
                "matrix": A,
                "subdomain": sub.nodes,
                "owned": np.flatnonzero(sub.owned),
                "config": config,
            }
            for sub in decomp.subdomains
        ]
        try:
            parts = pool.scatter("load", payloads)
        except WorkerError as e:
            reraise(e)
        return cls(decomp, pool, key, gather_owned(decomp, parts))

    @property
    def size(self) -> int:
        return self.decomp.num_nodes

    def _apply(self, op: str, x: np.ndarray) -> np.ndarray:
        vectors = self.pool.vectors
        vectors["input"][:] = np.ravel(x)
        self.pool.broadcast(op, key=self.key)
        return vectors["output"].copy()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._apply("matvec", x)

    def ras_apply(self, r: np.ndarray) -> np.ndarray:
        return self._apply("ras_apply", r)

    def preconditioner(self, config: SolverConfig):
        kind = PreconditionerKind(config.preconditioner)
        if kind == PreconditionerKind.NONE:
            return None
        if kind == PreconditionerKind.JACOBI:
            return JacobiPreconditioner(self.diagonal)
        return RestrictedAdditiveSchwarz(self)

    def solve(
        self,
        config: SolverConfig,
        b: Optional[np.ndarray] = None,
        x0: Optional[np.ndarray] = None,
        reference_norm: Optional[float] = None,
        name: str = "",
    ) -> Tuple[np.ndarray, SolveStats]:
        """GMRES on the worker-held operator with the configured preconditioner"""
        b = self.rhs if b is None else b
        if b is None:
            raise ConformanceError(f"system '{self.key}' has no right-hand side")
        return gmres_solve(
            DistributedMatrix(self),
            b,
            self.preconditioner(config),
            config,
            x0=x0,
            reference_norm=reference_norm,
            dot=OrderedDot(self.decomp.owned_sets),
            name=name,
        )


def gather_owned(decomp: OverlapDecomposition, parts: Sequence[np.ndarray]) -> np.ndarray:
    """Global vector from per-worker values of their owned nodes"""
    out = np.empty(decomp.num_nodes)
    for rows, part in zip(decomp.owned_sets, parts):
        out[rows] = part
    return out


class DistributedMatrix(spla.LinearOperator):
    """Row-block distributed operator: worker i computes the rows it owns"""

    def __init__(self, system: DistributedSystem):
        self.system = system
        super().__init__(dtype=np.float64, shape=(system.size, system.size))

    def _matvec(self, x):
        return self.system.matvec(x)


class RestrictedAdditiveSchwarz(spla.LinearOperator):
    """M^-1 r = sum_i R_i^T D_i A_i^-1 R_i r with A_i = R_i A R_i^T.

    Each worker solves with its own factored A_i and writes the entries its
    partition-of-unity weight keeps, which are the nodes it owns.
    """

    def __init__(self, system: DistributedSystem):
        self.system = system
        super().__init__(dtype=np.float64, shape=(system.size, system.size))

    @classmethod
    def from_matrix(
        cls,
        A,
        decomp: OverlapDecomposition,
        pool,
        config: SolverConfig = SolverConfig(),
        key: str = "default",
    ) -> "RestrictedAdditiveSchwarz":
        config = config.model_copy(update={"preconditioner": PreconditionerKind.RAS})
        return cls(DistributedSystem.load(A, decomp, pool, config, key))

    def _matvec(self, r):
        return self.system.ras_apply(r)


def ras_apply(preconditioner: RestrictedAdditiveSchwarz, residual: np.ndarray) -> np.ndarray:
    return preconditioner.matvec(residual)


def solve_distributed(
    A: sp.csr_matrix,
    b: np.ndarray,
    config: SolverConfig,
    decomp: OverlapDecomposition,
    pool,
    x0: Optional[np.ndarray] = None,
    reference_norm: Optional[float] = None,
    name: str = "",
) -> Tuple[np.ndarray, SolveStats]:
    """GMRES on the worker-distributed operator with the configured preconditioner"""
    system = DistributedSystem.load(A, decomp, pool, config, key=name or "default")
    return system.solve(config, b, x0=x0, reference_norm=reference_norm, name=name)
