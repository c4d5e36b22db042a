"""ASCII mesh format.

    rdmesh 1
    nodes N
    x y z            (N lines)
    tets M
    i j k l          (M lines, zero-based)
    bfaces K         (optional section)
    i j k tag        (K lines)

Tokens are whitespace separated and `#` starts a comment.
"""

from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from src.services.mesh import Mesh, signed_volumes, degenerate_mask
from src.utils import DegenerateElementError, GeometryError, MeshFormatError, logger

HEADER = "rdmesh 1"


def _content_lines(text: str) -> Iterator[Tuple[int, List[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield lineno, tokens


def _section(lines, name: str, required: bool = True) -> Tuple[int, int]:
    """Read a `name COUNT` line and return (count, line number)"""
    try:
        lineno, tokens = next(lines)
    except StopIteration:
        if required:
            raise MeshFormatError(f"missing '{name}' section")
        return -1, 0
    if len(tokens) != 2 or tokens[0] != name:
        raise MeshFormatError(f"expected '{name} <count>', got '{' '.join(tokens)}'", lineno)
    try:
        count = int(tokens[1])
    except ValueError:
        raise MeshFormatError(f"invalid {name} count '{tokens[1]}'", lineno)
    if count < 0:
        raise MeshFormatError(f"negative {name} count", lineno)
    return count, lineno


def _rows(lines, count: int, width: int, kind, what: str, after_line: int):
    values = []
    linenos = []
    for _ in range(count):
        try:
            lineno, tokens = next(lines)
        except StopIteration:
            raise MeshFormatError(f"expected {count} {what} lines after line {after_line}")
        if len(tokens) != width:
            raise MeshFormatError(f"{what} line needs {width} values, got {len(tokens)}", lineno)
        try:
            values.append([kind(t) for t in tokens])
        except ValueError:
            raise MeshFormatError(f"non-numeric {what} entry", lineno)
        linenos.append(lineno)
    return values, linenos


def load_mesh(path: Union[str, Path]) -> Mesh:
    """Parse and validate a mesh file; every error names its line"""
    path = Path(path)
    text = path.read_text()
    lines = _content_lines(text)

    try:
        lineno, tokens = next(lines)
    except StopIteration:
        raise MeshFormatError("empty mesh file")
    if " ".join(tokens) != HEADER:
        raise MeshFormatError(f"bad header '{' '.join(tokens)}', expected '{HEADER}'", lineno)

    n_nodes, at = _section(lines, "nodes")
    nodes, _ = _rows(lines, n_nodes, 3, float, "node", at)
    n_tets, at = _section(lines, "tets")
    tets, tet_lines = _rows(lines, n_tets, 4, int, "tet", at)

    faces: list = []
    face_lines: list = []
    n_faces, at = _section(lines, "bfaces", required=False)
    if n_faces >= 0:
        faces, face_lines = _rows(lines, n_faces, 4, int, "bface", at)
    trailing = next(lines, None)
    if trailing is not None:
        raise MeshFormatError("unexpected content after last section", trailing[0])

    nodes_arr = np.array(nodes, dtype=np.float64).reshape(-1, 3)
    tets_arr = np.array(tets, dtype=np.int64).reshape(-1, 4)
    for row, lineno in zip(tets_arr, tet_lines):
        if row.min() < 0 or row.max() >= n_nodes:
            raise MeshFormatError(f"tet node index out of range [0, {n_nodes})", lineno)
        if len(set(row.tolist())) != 4:
            raise MeshFormatError("tet repeats a node", lineno)
    faces_arr = np.array(faces, dtype=np.int64).reshape(-1, 4)
    for row, lineno in zip(faces_arr, face_lines):
        if row[:3].min() < 0 or row[:3].max() >= n_nodes:
            raise MeshFormatError(f"bface node index out of range [0, {n_nodes})", lineno)

    if len(tets_arr):
        flat = degenerate_mask(nodes_arr, tets_arr, signed_volumes(nodes_arr, tets_arr))
        if flat.any():
            raise MeshFormatError("tet has zero volume", tet_lines[int(np.flatnonzero(flat)[0])])

    try:
        mesh = Mesh.build(nodes_arr, tets_arr, faces_arr[:, :3], faces_arr[:, 3])
    except (GeometryError, DegenerateElementError) as e:
        raise MeshFormatError(f"{path.name}: {e}")
    logger.info(f"Loaded mesh {path}: {mesh.num_nodes} nodes, {mesh.num_tets} tets")
    return mesh


def save_mesh(mesh: Mesh, path: Union[str, Path]) -> None:
    """Write `mesh`; %.17g keeps every coordinate bit-exact on reload"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        f.write(f"{HEADER}\n")
        f.write(f"nodes {mesh.num_nodes}\n")
        np.savetxt(f, mesh.nodes, fmt="%.17g")
        f.write(f"tets {mesh.num_tets}\n")
        np.savetxt(f, mesh.tets, fmt="%d")
        if len(mesh.boundary_faces):
            f.write(f"bfaces {len(mesh.boundary_faces)}\n")
            faces = np.column_stack([mesh.boundary_faces, mesh.face_tags])
            np.savetxt(f, faces, fmt="%d")
    logger.debug(f"Saved mesh to {path}")
