import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.models import LocalSolverKind, PreconditionerKind, SolverConfig
from src.services.decomp import build_overlap, partition_mesh
from src.services.discretization import Discretization
from src.services.fem import AssemblyInput, assemble_system
from src.services.linsolve import (
    JacobiPreconditioner,
    OrderedDot,
    RestrictedAdditiveSchwarz,
    gmres_solve,
    ras_apply,
    solve_distributed,
)
from src.services.workers import InlinePool
from src.utils import NonConvergenceError, SingularSystemError, SubdomainSolveError


def convection_diffusion(n: int) -> sp.csr_matrix:
    main = np.full(n, 2.5)
    return sp.diags([main, np.full(n - 1, -1.3), np.full(n - 1, -0.7)], [0, 1, -1], format="csr")


def heat_system(mesh, dt=0.1):
    n = mesh.num_nodes
    x = mesh.nodes
    inp = AssemblyInput(
        mesh=mesh,
        dt=dt,
        diffusion=1.0 + x[:, 0],
        alpha=np.full(n, 0.8),
        source=np.sin(3 * x[:, 1]),
        previous=np.cos(2 * x[:, 2]),
    )
    return assemble_system(inp)


class TestGmres:
    def test_matches_direct_solve(self):
        A = convection_diffusion(60)
        b = np.linspace(1.0, 2.0, 60)
        x, stats = gmres_solve(A, b, config=SolverConfig(rel_tol=1e-12, restart=10))
        np.testing.assert_allclose(x, spla.spsolve(A.tocsc(), b), rtol=1e-9)
        assert stats.converged
        assert stats.residual <= 1e-12 * np.linalg.norm(b)

    def test_jacobi_preconditioning(self):
        A = convection_diffusion(40) @ sp.diags(np.linspace(1.0, 50.0, 40))
        b = np.ones(40)
        x, _ = gmres_solve(A, b, M=JacobiPreconditioner(A), config=SolverConfig(rel_tol=1e-10))
        assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b) * 1.0001

    def test_zero_rhs_needs_no_iterations(self):
        x, stats = gmres_solve(convection_diffusion(10), np.zeros(10))
        np.testing.assert_array_equal(x, 0.0)
        assert stats.iterations == 0

    def test_residual_history_is_monotone(self):
        A = convection_diffusion(80)
        _, stats = gmres_solve(A, np.ones(80), config=SolverConfig(restart=80, rel_tol=1e-10))
        history = np.array(stats.history)
        assert np.all(np.diff(history) <= 1e-12 * history[0])

    def test_iteration_budget(self):
        A = convection_diffusion(200)
        with pytest.raises(NonConvergenceError) as err:
            gmres_solve(A, np.ones(200), config=SolverConfig(max_iters=3, restart=3, rel_tol=1e-14))
        assert err.value.x is not None
        assert err.value.stats.iterations == 3
        assert not err.value.stats.converged

    def test_singular_operator(self):
        A = sp.csr_matrix((5, 5))
        with pytest.raises(SingularSystemError):
            gmres_solve(A, np.ones(5))

    def test_warm_start_at_solution(self):
        A = convection_diffusion(30)
        x_true = np.arange(30.0)
        _, stats = gmres_solve(A, A @ x_true, x0=x_true, config=SolverConfig(rel_tol=1e-8))
        assert stats.iterations == 0

    def test_jacobi_rejects_zero_diagonal(self):
        with pytest.raises(SingularSystemError):
            JacobiPreconditioner(sp.diags([1.0, 0.0, 2.0]))


def test_ordered_dot_matches_numpy(rng):
    x, y = rng.standard_normal(100), rng.standard_normal(100)
    dot = OrderedDot([np.arange(0, 40), np.arange(40, 100)])
    assert dot(x, y) == pytest.approx(float(np.dot(x, y)), rel=1e-12)


class TestSchwarz:
    @pytest.mark.parametrize(
        "kind", [LocalSolverKind.DENSE_LU, LocalSolverKind.ILU0, LocalSolverKind.SPARSE_LU]
    )
    def test_preconditioned_solve(self, unit_cube, kind):
        system = heat_system(unit_cube)
        config = SolverConfig(rel_tol=1e-10, ras_local_solver=kind)
        expected = spla.spsolve(system.matrix.tocsc(), system.rhs)
        with Discretization.build(unit_cube, workers=4) as disc:
            x, stats = solve_distributed(system.matrix, system.rhs, config, disc.decomp, disc.pool)
        np.testing.assert_allclose(x, expected, rtol=1e-7)
        assert stats.converged

    def test_exact_local_solves_beat_no_preconditioner(self, unit_cube):
        system = heat_system(unit_cube, dt=10.0)
        with Discretization.build(unit_cube, workers=2, parallel=False) as disc:
            _, ras = solve_distributed(
                system.matrix, system.rhs, SolverConfig(rel_tol=1e-10), disc.decomp, disc.pool
            )
            _, plain = solve_distributed(
                system.matrix,
                system.rhs,
                SolverConfig(rel_tol=1e-10, preconditioner=PreconditionerKind.NONE),
                disc.decomp,
                disc.pool,
            )
        assert ras.iterations < plain.iterations

    def test_single_subdomain_is_an_exact_inverse(self, unit_cube):
        system = heat_system(unit_cube)
        decomp = build_overlap(unit_cube, partition_mesh(unit_cube, 1), overlap=1)
        pool = InlinePool(1, vector_size=unit_cube.num_nodes)
        prec = RestrictedAdditiveSchwarz.from_matrix(system.matrix, decomp, pool)
        r = np.ones(unit_cube.num_nodes)
        np.testing.assert_allclose(system.matrix @ ras_apply(prec, r), r, atol=1e-10)

    @pytest.mark.parametrize("workers", [2, 4, 8])
    def test_decomposition_does_not_change_the_solution(self, unit_cube, workers):
        system = heat_system(unit_cube)
        config = SolverConfig(rel_tol=1e-8)
        with Discretization.build(unit_cube, 1) as disc:
            x1, _ = solve_distributed(system.matrix, system.rhs, config, disc.decomp, disc.pool)
        with Discretization.build(unit_cube, workers) as disc:
            xn, _ = solve_distributed(system.matrix, system.rhs, config, disc.decomp, disc.pool)
        b_norm = np.linalg.norm(system.rhs)
        assert np.linalg.norm(system.matrix @ (xn - x1)) <= 10 * config.rel_tol * b_norm
        assert np.linalg.norm(xn - x1) <= 10 * config.rel_tol * np.linalg.norm(x1)

    def test_diagonal_matrix_reduces_to_jacobi(self, unit_cube, rng):
        n = unit_cube.num_nodes
        diagonal = rng.uniform(1.0, 5.0, n)
        A = sp.diags(diagonal, format="csr")
        decomp = build_overlap(unit_cube, partition_mesh(unit_cube, 3), overlap=1)
        prec = RestrictedAdditiveSchwarz.from_matrix(A, decomp, InlinePool(3, vector_size=n))
        r = rng.standard_normal(n)
        np.testing.assert_allclose(ras_apply(prec, r), JacobiPreconditioner(A).matvec(r), rtol=1e-12)

    def test_singular_subdomain_is_named(self, unit_cube):
        n = unit_cube.num_nodes
        diagonal = np.ones(n)
        diagonal[n - 1] = 0.0
        A = sp.diags(diagonal, format="csr")
        decomp = build_overlap(unit_cube, partition_mesh(unit_cube, 2), overlap=1)
        with pytest.raises(SubdomainSolveError) as err:
            RestrictedAdditiveSchwarz.from_matrix(A, decomp, InlinePool(2, vector_size=n))
        owners = [sub.rank for sub in decomp.subdomains if n - 1 in sub.nodes]
        assert err.value.subdomain == owners[0]
