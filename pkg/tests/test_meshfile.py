import numpy as np
import pytest

from src.storage import load_mesh, save_mesh
from src.utils import MeshFormatError

TWO_TETS = """\
rdmesh 1
# unit tet plus one glued on the x = 0 face
nodes 5
0 0 0
1 0 0
0 1 0
0 0 1
-1 0 0
tets 2
0 1 2 3
0 4 2 3   # negative orientation
bfaces 1
0 1 2 5
"""


def write(tmp_path, text):
    path = tmp_path / "mesh.rdm"
    path.write_text(text)
    return path


def test_load_reorients_and_reads_faces(tmp_path):
    mesh = load_mesh(write(tmp_path, TWO_TETS))
    assert mesh.num_nodes == 5
    assert mesh.num_tets == 2
    np.testing.assert_allclose(mesh.volumes, [1 / 6, 1 / 6])
    assert mesh.face_tags.tolist() == [5]


def test_save_then_load_is_exact(tmp_path, unit_cube):
    path = tmp_path / "cube.rdm"
    save_mesh(unit_cube, path)
    loaded = load_mesh(path)
    np.testing.assert_array_equal(loaded.nodes, unit_cube.nodes)
    np.testing.assert_array_equal(loaded.tets, unit_cube.tets)
    np.testing.assert_array_equal(loaded.face_tags, unit_cube.face_tags)


@pytest.mark.parametrize(
    "old, new, line",
    [
        ("rdmesh 1", "rdmesh 2", 1),
        ("0 1 2 3\n", "0 1 2 9\n", 10),
        ("0 1 2 3\n", "0 1 2 2\n", 10),
        ("0 0 1\n", "0 0 x\n", 7),
        ("tets 2", "tets two", 9),
    ],
)
def test_errors_name_the_line(tmp_path, old, new, line):
    with pytest.raises(MeshFormatError) as err:
        load_mesh(write(tmp_path, TWO_TETS.replace(old, new, 1)))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_zero_volume_tet_names_its_line(tmp_path):
    text = TWO_TETS.replace("-1 0 0", "0.5 0.5 0")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(write(tmp_path, text.replace("0 4 2 3", "0 1 2 4")))
    assert err.value.line == 11


def test_truncated_file(tmp_path):
    text = "\n".join(TWO_TETS.splitlines()[:9]) + "\n"
    with pytest.raises(MeshFormatError, match="expected 2 tet lines"):
        load_mesh(write(tmp_path, text))


def test_trailing_content(tmp_path):
    with pytest.raises(MeshFormatError) as err:
        load_mesh(write(tmp_path, TWO_TETS + "extra\n"))
    assert err.value.line == 14
