"""The coupled time loop.

Every step runs, in this fixed order: effective diffusion and alpha from
c_film, the Mg solve (bulk pinned by the current phi), the nodewise film
update, the interface velocity and the level-set solve, and finally the
observables row.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from src.models import FieldState, ObservableRow, PrimitiveKind, SimConfig, TimingRecord
from src.services.discretization import Discretization
from src.services.levelset import (
    MM2_TO_M2,
    advance_levelset,
    gradient_guard,
    hydrogen_volume,
    init_signed_distance,
    interface_area,
    interface_velocity,
    mass_from_volumes,
    solid_volume,
)
from src.services.mesh import Mesh, generate_box_mesh
from src.services.perf import build_report, format_table, measure_step
from src.services.physics import (
    effective_diffusion,
    reconcile_exchange,
    step_film_distributed,
    step_mg,
)
from src.services.runconfig import validate_config
from src.storage import (
    load_mesh,
    observables_writer,
    timings_writer,
    write_matrix,
    write_scaling,
    write_snapshot,
    write_subdomains,
)
from src.utils import ConfigError, CorrolabError, GeometryError, SimulationError, logger

STEP_ORDER = ("diffusion/alpha", "mg", "film", "velocity", "levelset", "observables")


def build_mesh(config: SimConfig) -> Mesh:
    source = config.mesh
    if source.path:
        return load_mesh(source.path)
    return generate_box_mesh(
        source.outer,
        source.inner,
        source.coarse_h,
        source.fine_h,
        refine_margin=source.refine_margin,
        grading=source.grading,
    )


def weak_config(config: SimConfig, workers: int) -> SimConfig:
    """The weak-scaling preset: N unit blocks stacked along x, N workers"""
    source = config.mesh
    if source.path:
        raise ConfigError("weak scaling needs a generated mesh", ["mesh.path"])
    if source.inner.kind != PrimitiveKind.BOX:
        raise ConfigError("weak scaling stretches the inner primitive, which must be a box", ["mesh.inner.kind"])
    data = config.model_dump()
    data["workers"] = workers
    data["mesh"]["outer"] = source.outer.stretched(workers).model_dump()
    data["mesh"]["inner"] = source.inner.stretched(workers).model_dump()
    return validate_config(data)


@dataclass
class RunSummary:
    steps: int
    state: FieldState
    last: Optional[ObservableRow]
    out_dir: Path
    timings: List[TimingRecord] = field(default_factory=list)

    def lines(self) -> List[str]:
        out = [f"steps: {self.steps}", f"time: {self.state.time:.4g} h"]
        if self.last is not None:
            out += [
                f"mass lost: {self.last.mass_lost_g:.6g} g",
                f"hydrogen: {self.last.hydrogen:.6g} m^3/m^2",
                f"interface area: {self.last.area_mm2:.6g} mm^2",
                f"solid volume: {self.last.solid_volume_mm3:.6g} mm^3",
            ]
        out.append(f"outputs: {self.out_dir}")
        return out


class Simulation:
    """One configured run: mesh, workers, fields and output files.

    `setup()` (or entering the context manager) builds everything and starts
    the workers; `step()` advances one time step and returns its per-PDE
    timings; `close()` stops the workers and closes the CSV files.
    """

    def __init__(
        self,
        config: SimConfig,
        workers: Optional[int] = None,
        out_dir: Optional[Union[str, Path]] = None,
        write_outputs: bool = True,
        debug_exports: bool = False,
        parallel: bool = True,
        mesh: Optional[Mesh] = None,
    ):
        self.config = config
        self.workers = workers or config.workers
        self.out_dir = Path(out_dir or config.output_dir)
        self.write_outputs = write_outputs
        self.debug_exports = debug_exports
        self.parallel = parallel
        self.mesh = mesh
        self.disc: Optional[Discretization] = None
        self.state: Optional[FieldState] = None
        self.step_count = 0
        self.last_row: Optional[ObservableRow] = None
        self._observables = None
        self._timings = None

    def setup(self) -> "Simulation":
        cfg = self.config
        try:
            if self.mesh is None:
                self.mesh = build_mesh(cfg)
            self.disc = Discretization.build(
                self.mesh, self.workers, cfg.overlap, cfg.seed, parallel=self.parallel
            )
        except CorrolabError as e:
            raise SimulationError(0, "setup", e) from e
        self.disc.start()
        try:
            self._phase("setup", self._initialize)
        except BaseException:
            self.close()
            raise
        return self

    def _initialize(self) -> None:
        cfg = self.config
        logger.info(
            f"Mesh {self.mesh.num_nodes} nodes / {self.mesh.num_tets} tets, "
            f"{self.workers} workers, overlap {cfg.overlap}"
        )
        logger.info(f"Step order: {' -> '.join(STEP_ORDER)}")

        chem, numerics = cfg.chemistry, cfg.numerics
        phi = init_signed_distance(self.mesh, cfg.mesh.inner)
        c_mg = np.where(phi >= 0, chem.mg_sol, numerics.initial_medium_mg)
        c_film = np.full(self.mesh.num_nodes, min(numerics.initial_film, chem.film_max))
        self.state = FieldState(c_mg=c_mg, c_film=c_film, phi=phi, time=0.0)

        self.initial_volume = solid_volume(phi, self.mesh, self.disc)
        self.initial_area = interface_area(phi, self.mesh, self.disc)
        if not self.initial_area > 0:
            raise GeometryError("inner primitive has no interface on this mesh")

        if self.write_outputs:
            self._observables = observables_writer(self.out_dir).open()
            self._timings = timings_writer(self.out_dir).open()
            if cfg.snapshot_interval:
                write_snapshot(self.mesh, self.state, self.out_dir, 0)
        if self.debug_exports:
            self._export_debug()

    def _export_debug(self) -> None:
        debug_dir = self.out_dir / "debug"
        write_subdomains(self.mesh, self.disc.decomp, debug_dir / "subdomains.vtk")
        write_matrix(self.disc.assembler.mass, debug_dir / "mass.mtx", comment="consistent P1 mass")
        diffusion = effective_diffusion(self.state.c_film, self.config.chemistry)
        write_matrix(
            self.disc.assembler.stiffness(diffusion),
            debug_dir / "stiffness.mtx",
            comment="P1 stiffness weighted by the initial effective diffusion",
        )

    def close(self) -> None:
        for writer in (self._observables, self._timings):
            if writer is not None:
                writer.close()
        self._observables = self._timings = None
        if self.disc is not None:
            self.disc.stop()

    def __enter__(self) -> "Simulation":
        return self.setup()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def _phase(self, pde: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SimulationError:
            raise
        except CorrolabError as e:
            raise SimulationError(self.step_count, pde, e) from e

    def step(self) -> TimingRecord:
        cfg = self.config
        chem, numerics, dt = cfg.chemistry, cfg.numerics, cfg.dt
        state = self.state
        self.step_count += 1
        n = self.step_count

        t0 = time.perf_counter()
        mg = self._phase("mg", step_mg, state, self.disc, chem, dt, cfg.solver.mg, numerics)
        t1 = time.perf_counter()
        c_film = self._phase(
            "film", step_film_distributed, self.disc, state.c_film, mg.c_mg, chem, dt
        )
        c_mg = mg.c_mg
        if numerics.conservative_exchange:
            c_mg, _ = reconcile_exchange(mg.c_mg, state.c_film, c_film, chem, dt, mg.penalized)
        t2 = time.perf_counter()
        field_v = self._phase(
            "velocity",
            interface_velocity,
            state.phi,
            c_mg,
            c_film,
            self.mesh,
            chem,
            numerics.band_width,
            self.disc,
        )
        phi, _ = self._phase(
            "levelset",
            advance_levelset,
            state.phi,
            field_v.velocity,
            dt,
            self.disc,
            cfg.solver.levelset,
            numerics.lump_levelset_mass,
        )
        t3 = time.perf_counter()

        self.state = FieldState(c_mg=c_mg, c_film=c_film, phi=phi, time=n * dt)
        gradient_guard(phi, self.mesh, field_v.band, numerics.gradient_guard, self.disc)
        record = TimingRecord(
            workers=self.workers, ls_pde=t3 - t2, mg_pde=t1 - t0, film_pde=t2 - t1, step=n
        )
        self._phase("observables", self._record, record)
        return record

    def observables(self) -> ObservableRow:
        state, chem = self.state, self.config.chemistry
        volume = solid_volume(state.phi, self.mesh, self.disc)
        mass = mass_from_volumes(self.initial_volume, volume, chem)
        return ObservableRow(
            time_h=state.time,
            mass_lost_g=mass,
            hydrogen=hydrogen_volume(mass, self.initial_area * MM2_TO_M2, chem),
            area_mm2=interface_area(state.phi, self.mesh, self.disc),
            solid_volume_mm3=volume,
        )

    def _record(self, record: TimingRecord) -> None:
        self.last_row = self.observables()
        if not self.write_outputs:
            return
        self._observables.write(self.last_row.as_tuple())
        self._timings.write(record.as_tuple())
        interval = self.config.snapshot_interval
        if interval and self.step_count % interval == 0:
            write_snapshot(self.mesh, self.state, self.out_dir, self.step_count)

    def run(self, steps: Optional[int] = None) -> RunSummary:
        steps = self.config.num_steps if steps is None else steps
        timings = []
        for _ in range(steps):
            record = self.step()
            timings.append(record)
            row = self.last_row
            logger.info(
                f"step {record.step}/{steps} t={row.time_h:.4g}h "
                f"mass_lost={row.mass_lost_g:.6g}g area={row.area_mm2:.6g}mm2"
            )
        return RunSummary(self.step_count, self.state, self.last_row, self.out_dir, timings)


def run_simulation(
    config: SimConfig,
    workers: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    debug_exports: bool = False,
) -> RunSummary:
    """Full run; CSV rows written before a failure are kept on disk"""
    with Simulation(config, workers, out_dir, debug_exports=debug_exports) as sim:
        summary = sim.run()
    for line in summary.lines():
        logger.info(line)
    return summary


def run_scaling(
    config: SimConfig,
    worker_counts: Sequence[int],
    weak: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
    steps: Optional[int] = None,
):
    """Time `steps` steps at each worker count and write timings, scaling.csv and scaling.txt"""
    counts = sorted(set(worker_counts))
    if 1 not in counts:
        counts.insert(0, 1)
        logger.info("Added the N=1 baseline to the worker counts")
    out = Path(out_dir or config.output_dir)
    records = []
    with timings_writer(out) as timings:
        for n in counts:
            cfg = weak_config(config, n) if weak else config
            with Simulation(cfg, workers=n, out_dir=out, write_outputs=False) as sim:
                record = measure_step(sim, n, steps)
            timings.write(record.as_tuple())
            records.append(record)

    report = build_report(records, weak=weak)
    write_scaling(report, out / "scaling.csv")
    table = format_table(report)
    (out / "scaling.txt").write_text(table, encoding="utf-8")
    return report
