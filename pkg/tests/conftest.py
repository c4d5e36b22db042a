from pathlib import Path

import numpy as np
import pytest

from src.models import ChemParams, GeometryPrimitive, SimConfig
from src.services.mesh import Mesh, generate_box_mesh
from src.services.runconfig import validate_config

FIXTURES = Path(__file__).parent / "fixtures"


def box(center, extents) -> GeometryPrimitive:
    return GeometryPrimitive.box(tuple(center), tuple(extents))


@pytest.fixture(scope="session")
def unit_cube() -> Mesh:
    """Uniform 4 x 4 x 4 grid of the unit cube, 384 tets"""
    return generate_box_mesh(
        box((0.5, 0.5, 0.5), (1.0, 1.0, 1.0)),
        box((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
        coarse_h=0.25,
        fine_h=0.25,
    )


@pytest.fixture(scope="session")
def block_mesh() -> Mesh:
    """2 x 2 x 1 mm block inside a 6 x 6 x 4 mm medium, uniform h = 0.5"""
    return generate_box_mesh(
        box((0.0, 0.0, 0.0), (6.0, 6.0, 4.0)),
        box((0.0, 0.0, 0.0), (2.0, 2.0, 1.0)),
        coarse_h=0.5,
        fine_h=0.5,
    )


@pytest.fixture
def single_tet() -> Mesh:
    return Mesh.build(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        [[0, 1, 2, 3]],
    )


@pytest.fixture
def chem() -> ChemParams:
    return ChemParams()


@pytest.fixture
def timings_path() -> Path:
    return FIXTURES / "strong_scaling_timings.csv"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def small_config(**overrides) -> SimConfig:
    """2 mm cube in a 4 mm medium, uniform h = 0.5; dotted keys override nested fields"""
    data = {
        "dt": 0.01,
        "end_time": 0.02,
        "mesh": {
            "outer": {"kind": "box", "extents": [4.0, 4.0, 4.0]},
            "inner": {"kind": "box", "extents": [2.0, 2.0, 2.0]},
            "coarse_h": 0.5,
            "fine_h": 0.5,
        },
    }
    for key, value in overrides.items():
        section = data
        *parents, leaf = key.split(".")
        for parent in parents:
            section = section.setdefault(parent, {})
        section[leaf] = value
    return validate_config(data)
