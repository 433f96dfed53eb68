"""Shared maps and robots; ESDF builds are the slow part, so they are session scoped."""

import pytest

from app.robot_model import load_model_file
from app.sdf_map import build_from_scene
from app.terrain import curb, flat_ground, inclined_plane


@pytest.fixture(scope="session")
def flat_map():
    return build_from_scene(flat_ground(), voxel_size=0.05)


@pytest.fixture(scope="session")
def ramp_map():
    return build_from_scene(inclined_plane(16.0), voxel_size=0.05)


@pytest.fixture(scope="session")
def box_robot():
    return load_model_file("box")


@pytest.fixture(scope="session")
def asterix():
    return load_model_file("asterix")


@pytest.fixture(scope="session")
def curb_map():
    return build_from_scene(curb(), voxel_size=0.05)
