"""End-to-end checks of the coupled model.

The cheap ones run by default; the long runs are marked slow
(`pytest -m slow` to include them).
"""

import math
import os

import numpy as np
import pandas as pd
import pytest
import scipy.sparse.linalg as spla

from src.models import GeometryPrimitive, SolverConfig
from src.services.discretization import Discretization
from src.services.fem import Assembler, AssemblyInput
from src.services.levelset import advance_levelset, init_signed_distance, solid_volume
from src.services.mesh import generate_box_mesh
from src.services.perf import build_report, fit_amdahl
from src.services.simulation import Simulation, run_scaling, run_simulation
from src.storage import read_timings
from tests.conftest import box, small_config


def test_amdahl_fit_of_the_shipped_timings(timings_path):
    assert fit_amdahl(read_timings(timings_path)) == pytest.approx(0.01, abs=0.005)


def test_decomposition_does_not_change_one_step(tmp_path):
    config = small_config(
        end_time=0.01,
        **{
            "mesh.coarse_h": 0.2,
            "mesh.fine_h": 0.2,
            "solver.mg": {"rel_tol": 1e-10},
            "solver.levelset": {"rel_tol": 1e-10},
        },
    )
    states = {}
    for workers in (1, 2, 4, 8):
        with Simulation(config, workers=workers, out_dir=tmp_path, write_outputs=False) as sim:
            weights = np.zeros(sim.mesh.num_nodes)
            for sub in sim.disc.decomp.subdomains:
                weights[sub.nodes] += sub.weights
            assert np.array_equal(weights, np.ones(sim.mesh.num_nodes))
            sim.step()
            states[workers] = sim.state

    def rel(a, b):
        return np.linalg.norm(a - b) / np.linalg.norm(b)

    base = states[1]
    for workers in (2, 4, 8):
        other = states[workers]
        assert rel(other.c_mg, base.c_mg) < 1e-6
        assert rel(other.phi, base.phi) < 1e-6
        if np.linalg.norm(base.c_film) > 0:
            assert rel(other.c_film, base.c_film) < 1e-6


def _manufactured_error(h: float, end_time: float) -> float:
    """L2 error of backward Euler / P1 for u = exp(-t) cos(pi x) cos(pi y) cos(pi z)"""
    mesh = generate_box_mesh(
        box((0.5, 0.5, 0.5), (1.0, 1.0, 1.0)),
        box((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
        coarse_h=h,
        fine_h=h,
    )
    x, y, z = mesh.nodes.T
    shape = np.cos(math.pi * x) * np.cos(math.pi * y) * np.cos(math.pi * z)
    assembler = Assembler(mesh)
    n = mesh.num_nodes
    dt = 0.5 * h * h
    steps = int(round(end_time / dt))
    u = shape.copy()
    for k in range(1, steps + 1):
        source = (3.0 * math.pi**2 - 1.0) * math.exp(-k * dt) * shape
        system = assembler.assemble(
            AssemblyInput(
                mesh=mesh,
                dt=dt,
                diffusion=np.ones(n),
                alpha=np.ones(n),
                source=source,
                previous=u,
            )
        )
        u = spla.spsolve(system.matrix.tocsc(), system.rhs)
    err = u - math.exp(-steps * dt) * shape
    return math.sqrt(float(err @ (assembler.mass @ err)))


@pytest.mark.slow
def test_manufactured_solution_converges_at_second_order():
    errors = [_manufactured_error(h, 0.125) for h in (0.25, 0.125, 0.0625)]
    assert errors[0] > errors[1] > errors[2]
    order = math.log2(errors[1] / errors[2])
    assert order >= 1.8


@pytest.mark.slow
def test_shrinking_sphere_tracks_the_analytic_radius():
    h, r0, speed, dt, steps = 0.2, 1.0, 0.5, 0.01, 50
    mesh = generate_box_mesh(
        box((0.0, 0.0, 0.0), (3.0, 3.0, 3.0)),
        box((0.0, 0.0, 0.0), (2.0, 2.0, 2.0)),
        coarse_h=h,
        fine_h=h,
    )
    phi = init_signed_distance(mesh, GeometryPrimitive.sphere((0.0, 0.0, 0.0), r0))
    solver = SolverConfig(rel_tol=1e-10, ras_local_solver="sparse_lu")
    velocity = np.full(mesh.num_nodes, speed)
    with Discretization.build(mesh, workers=2) as disc:
        for _ in range(steps):
            phi, _ = advance_levelset(phi, velocity, dt, disc, solver)
        volume = solid_volume(phi, mesh, disc)

    radius = (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)
    diameter = h * math.sqrt(3.0)
    assert radius == pytest.approx(r0 - speed * steps * dt, abs=2.0 * diameter)


def desk_config(**overrides):
    data = {
        "dt": 0.025,
        "end_time": 5.0,
        "mesh.outer": {"kind": "box", "extents": [5.0, 5.0, 3.0]},
        "mesh.inner": {"kind": "box", "extents": [2.0, 2.0, 1.0]},
        "mesh.coarse_h": 0.25,
        "mesh.fine_h": 0.125,
        "numerics.lump_levelset_mass": True,
    }
    data.update(overrides)
    return small_config(**data)


@pytest.mark.slow
def test_desk_scale_run_properties(tmp_path):
    config = desk_config(workers=4)
    assert config.num_steps >= 200
    summary = run_simulation(config, out_dir=tmp_path)
    frame = pd.read_csv(tmp_path / "observables.csv")
    assert len(frame) == config.num_steps

    tol = 1e-9
    mass = frame["mass_lost_g"].to_numpy()
    hydrogen = frame["hydrogen"].to_numpy()
    volume = frame["solid_volume_mm3"].to_numpy()
    assert np.all(np.diff(mass) >= -tol * max(mass.max(), 1.0))
    assert np.all(np.diff(hydrogen) >= -tol * max(hydrogen.max(), 1.0))
    assert np.all(np.diff(volume) <= tol * volume[0])

    film = summary.state.c_film
    assert film.min() >= 0.0
    assert film.max() <= config.chemistry.film_max


@pytest.mark.slow
@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs at least 4 cores")
def test_strong_scaling_report(tmp_path):
    report = run_scaling(desk_config(end_time=0.1), [2, 4], out_dir=tmp_path, steps=3)
    assert report.worker_counts == [1, 2, 4]
    assert report.efficiencies[0] == pytest.approx(1.0)
    assert all(r.total > 0 for r in report.records)
    assert report.speedups[report.worker_counts.index(4)] >= 2.5
    assert all(a >= b for a, b in zip(report.efficiencies, report.efficiencies[1:]))
    assert 0.0 <= report.f_amdahl <= 1.0
    again = build_report(read_timings(tmp_path / "timings.csv"))
    assert again.speedups == pytest.approx(report.speedups)


def test_identical_runs_write_identical_observables(tmp_path):
    config = small_config(workers=3)
    run_simulation(config, out_dir=tmp_path / "first")
    run_simulation(config, out_dir=tmp_path / "second")
    first = (tmp_path / "first" / "observables.csv").read_bytes()
    assert first == (tmp_path / "second" / "observables.csv").read_bytes()
