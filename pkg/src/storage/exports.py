"""Visualisation and debug exports: legacy ASCII VTK and Matrix Market"""

from pathlib import Path
from typing import Dict, Optional, Union

import meshio
import numpy as np
import scipy.io
import scipy.sparse as sp

from src.models import FieldState
from src.services.decomp import OverlapDecomposition
from src.services.mesh import Mesh
from src.utils import ConformanceError, logger


def _write_vtk(
    mesh: Mesh,
    path: Path,
    point_data: Optional[Dict[str, np.ndarray]] = None,
    cell_data: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    for name, values in (point_data or {}).items():
        if len(values) != mesh.num_nodes:
            raise ConformanceError(f"point field {name} has {len(values)} values, mesh has {mesh.num_nodes} nodes")
    m = meshio.Mesh(
        points=np.asarray(mesh.nodes),
        cells=[("tetra", np.asarray(mesh.tets, dtype=np.int64))],
        point_data={k: np.asarray(v, dtype=np.float64) for k, v in (point_data or {}).items()},
        cell_data={k: [np.asarray(v)] for k, v in (cell_data or {}).items()},
    )
    m.write(path, file_format="vtk", binary=False)
    return path


def snapshot_path(out_dir: Union[str, Path], step: int) -> Path:
    return Path(out_dir) / f"snapshot_{step}.vtk"


def write_snapshot(mesh: Mesh, state: FieldState, out_dir: Union[str, Path], step: int) -> Path:
    """phi, c_mg and c_film as point data"""
    path = _write_vtk(
        mesh,
        snapshot_path(out_dir, step),
        point_data={"phi": state.phi, "c_mg": state.c_mg, "c_film": state.c_film},
    )
    logger.debug(f"Snapshot written: {path}")
    return path


def write_subdomains(mesh: Mesh, decomp: OverlapDecomposition, path: Union[str, Path]) -> Path:
    """Elements coloured by owning subdomain; ghost layers as a separate overlap count"""
    owner = np.empty(mesh.num_tets, dtype=np.int32)
    overlap = np.zeros(mesh.num_tets, dtype=np.int32)
    for sub in decomp.subdomains:
        owner[sub.core_elements] = sub.rank
        overlap[sub.elements] += 1
    path = _write_vtk(
        mesh,
        Path(path),
        cell_data={"subdomain": owner, "copies": overlap},
    )
    logger.info(f"Subdomain map written: {path}")
    return path


def write_matrix(matrix: sp.spmatrix, path: Union[str, Path], comment: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
    logger.info(f"Matrix {matrix.shape[0]}x{matrix.shape[1]} nnz={matrix.nnz} written: {path}")
    return path
