from .meshfile import load_mesh, save_mesh
from .series import (
    SeriesWriter,
    observables_writer,
    timings_writer,
    read_observables,
    read_timings,
    write_scaling,
)
from .exports import write_snapshot, write_subdomains, write_matrix

__all__ = [
    "load_mesh",
    "save_mesh",
    "SeriesWriter",
    "observables_writer",
    "timings_writer",
    "read_observables",
    "read_timings",
    "write_scaling",
    "write_snapshot",
    "write_subdomains",
    "write_matrix",
]
