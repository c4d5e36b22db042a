import numpy as np
import pandas as pd
import pytest

from src.services import simulation as simulation_module
from src.services.levelset import hydrogen_volume
from src.services.simulation import Simulation, run_scaling, run_simulation, weak_config
from src.utils import ConfigError, SimulationError, SolverError
from tests.conftest import small_config


class TestRun:
    def test_single_step_writes_one_row(self, tmp_path):
        config = small_config(end_time=0.01)
        summary = run_simulation(config, out_dir=tmp_path)
        assert summary.steps == 1
        observables = (tmp_path / "observables.csv").read_text().splitlines()
        assert observables[0] == "time_h,mass_lost_g,hydrogen,area_mm2,solid_volume_mm3"
        assert len(observables) == 2
        assert len((tmp_path / "timings.csv").read_text().splitlines()) == 2
        assert summary.last.time_h == pytest.approx(0.01)

    def test_initial_geometry(self, tmp_path):
        with Simulation(small_config(), out_dir=tmp_path, write_outputs=False) as sim:
            assert sim.initial_volume == pytest.approx(8.0)
            assert sim.initial_area == pytest.approx(24.0)
            assert sim.state.c_mg.max() == pytest.approx(sim.config.chemistry.mg_sol)
            assert sim.state.c_film.max() == 0.0

    def test_hydrogen_is_per_initial_area(self, tmp_path):
        config = small_config(end_time=0.03)
        with Simulation(config, out_dir=tmp_path, write_outputs=False) as sim:
            for _ in range(3):
                sim.step()
            row = sim.observables()
            assert row.area_mm2 != pytest.approx(sim.initial_area, rel=1e-12)
            expected = hydrogen_volume(row.mass_lost_g, sim.initial_area * 1e-6, config.chemistry)
        assert row.hydrogen == pytest.approx(expected, rel=1e-12)

    def test_mass_loss_is_monotone_without_film(self, tmp_path):
        config = small_config(
            end_time=0.1,
            **{"chemistry.k1": 0.0, "chemistry.k2": 0.0, "numerics.lump_levelset_mass": True},
        )
        run_simulation(config, out_dir=tmp_path)
        frame = pd.read_csv(tmp_path / "observables.csv")
        mass = frame["mass_lost_g"].to_numpy()
        assert len(mass) == 10
        assert mass[-1] > mass[0] > 0
        assert np.all(np.diff(mass) >= -1e-9 * mass[-1])
        assert np.all(np.diff(frame["solid_volume_mm3"].to_numpy()) <= 1e-9)

    def test_deterministic_output(self, tmp_path):
        config = small_config(workers=2)
        run_simulation(config, out_dir=tmp_path / "a")
        run_simulation(config, out_dir=tmp_path / "b")
        a = (tmp_path / "a" / "observables.csv").read_bytes()
        b = (tmp_path / "b" / "observables.csv").read_bytes()
        assert a == b

    def test_worker_count_does_not_change_the_answer(self, tmp_path):
        tight = {"solver.mg": {"rel_tol": 1e-12}, "solver.levelset": {"rel_tol": 1e-12}}
        config = small_config(**tight)
        one = run_simulation(config, workers=1, out_dir=tmp_path / "one").last
        four = run_simulation(config, workers=4, out_dir=tmp_path / "four").last
        assert four.solid_volume_mm3 == pytest.approx(one.solid_volume_mm3, rel=1e-8)
        assert four.area_mm2 == pytest.approx(one.area_mm2, rel=1e-8)
        assert four.mass_lost_g == pytest.approx(one.mass_lost_g, rel=1e-5)

    def test_snapshots(self, tmp_path):
        run_simulation(small_config(snapshot_interval=1), out_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("snapshot_*.vtk"))
        assert names == ["snapshot_0.vtk", "snapshot_1.vtk", "snapshot_2.vtk"]

    def test_debug_exports(self, tmp_path):
        run_simulation(small_config(end_time=0.01, workers=2), out_dir=tmp_path, debug_exports=True)
        for name in ("subdomains.vtk", "mass.mtx", "stiffness.mtx"):
            assert (tmp_path / "debug" / name).is_file()


class TestErrors:
    def test_step_failure_carries_context(self, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise SolverError("film solve exploded")

        monkeypatch.setattr(simulation_module, "step_film_distributed", broken)
        sim = Simulation(small_config(), out_dir=tmp_path).setup()
        try:
            with pytest.raises(SimulationError) as err:
                sim.step()
        finally:
            sim.close()
        assert err.value.step == 1
        assert err.value.pde == "film"
        assert isinstance(err.value.cause, SolverError)

    def test_rows_before_a_failure_are_kept(self, tmp_path, monkeypatch):
        config = small_config(end_time=0.03)
        real = simulation_module.step_film_distributed
        calls = {"n": 0}

        def fails_third_time(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:
                raise SolverError("no convergence")
            return real(*args, **kwargs)

        monkeypatch.setattr(simulation_module, "step_film_distributed", fails_third_time)
        with pytest.raises(SimulationError):
            run_simulation(config, out_dir=tmp_path)
        assert len((tmp_path / "observables.csv").read_text().splitlines()) == 3

    def test_no_interface_fails_setup(self, tmp_path):
        # sphere between grid nodes: no node has phi >= 0
        config = small_config(
            **{"mesh.inner": {"kind": "sphere", "center": [0.25, 0.25, 0.25], "radius": 0.1}}
        )
        with pytest.raises(SimulationError) as err:
            Simulation(config, out_dir=tmp_path, write_outputs=False).setup()
        assert err.value.step == 0
        assert err.value.pde == "setup"


class TestWeakPreset:
    def test_stretches_along_x(self):
        config = weak_config(small_config(), 3)
        assert config.workers == 3
        assert config.mesh.outer.extents == (12.0, 4.0, 4.0)
        assert config.mesh.inner.extents == (6.0, 2.0, 2.0)

    def test_needs_a_box(self):
        config = small_config(**{"mesh.inner": {"kind": "sphere", "radius": 1.0}})
        with pytest.raises(ConfigError):
            weak_config(config, 2)

    def test_needs_a_generated_mesh(self):
        with pytest.raises(ConfigError) as err:
            weak_config(small_config(**{"mesh.path": "block.mesh"}), 2)
        assert err.value.keys == ["mesh.path"]


def test_scaling_run_writes_its_files(tmp_path):
    report = run_scaling(small_config(), [2], out_dir=tmp_path, steps=1)
    assert report.worker_counts == [1, 2]
    assert report.speedups[0] == pytest.approx(1.0)
    assert report.f_amdahl is not None
    timings = pd.read_csv(tmp_path / "timings.csv")
    assert list(timings["N"]) == [1, 2]
    assert (tmp_path / "scaling.csv").is_file()
    assert (tmp_path / "scaling.txt").read_text().startswith("Strong-scaling test result")
