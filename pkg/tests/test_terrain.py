"""Analytic primitives, scene and heightmap files, arena analogs."""

import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import InvalidGridError, InvalidSceneError
from app.sdf_map import build_from_scene, query_distance
from app.terrain import (
    BoxPrimitive,
    HeightGrid,
    PlanePrimitive,
    PrismPrimitive,
    continuous_ramps,
    curb,
    load_heightmap,
    load_scene,
    polygon_sdf,
    random_heightmap,
    save_heightmap,
    save_scene,
)

SCENES = Path(__file__).resolve().parent.parent / "app" / "data" / "scenes"


def test_box_distance_outside_inside_and_at_edges():
    box = BoxPrimitive(center=(0.0, 0.0, 0.0), size=(2.0, 2.0, 2.0))
    pts = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.5, 0.9]])

    d = box.signed_distance(pts)

    np.testing.assert_allclose(d, [1.0, -1.0, math.sqrt(2.0), -0.1], atol=1e-12)


def test_plane_normal_is_normalized():
    plane = PlanePrimitive(normal=(0.0, 0.0, 2.0))

    assert plane.normal == (0.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        PlanePrimitive(normal=(0.0, 0.0, 0.0))


def test_polygon_sdf_square():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts = np.array([[0.5, 0.5], [2.0, 0.5], [0.5, 0.9], [-1.0, -1.0]])

    d = polygon_sdf(pts, square)

    np.testing.assert_allclose(d, [-0.5, 1.0, -0.1, math.sqrt(2.0)], atol=1e-12)


def test_prism_extrusion_is_bounded():
    prism = PrismPrimitive(
        axis="x", profile=[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], extent=(-0.5, 0.5)
    )
    pts = np.array([[0.5, 0.0, 0.5], [0.5, 1.5, 0.5], [0.5, 0.0, 1.5]])

    np.testing.assert_allclose(prism.signed_distance(pts), [-0.5, 1.0, 0.5], atol=1e-12)


def test_ramp_apex_distance():
    scene = continuous_ramps()

    assert scene.signed_distance(np.array([[0.0, 0.0, 0.22]]))[0] == pytest.approx(0.05, abs=1e-12)

    esdf = build_from_scene(scene, bounds=((-0.5, -0.5, -0.1), (0.5, 0.5, 0.5)), voxel_size=0.02)
    assert query_distance(esdf, (0.0, 0.0, 0.22)) == pytest.approx(0.05, abs=0.005)


def test_curb_bar_top_and_open_ground():
    scene = curb()
    pts = np.array([[0.0, 0.0, 0.15], [0.6, 0.0, 0.2]])

    np.testing.assert_allclose(scene.signed_distance(pts), [0.05, 0.2], atol=1e-12)


def test_bundled_curb_scene_matches_the_arena():
    scene = load_scene(SCENES / "curb.yaml")
    rng = np.random.default_rng(0)
    pts = rng.uniform((-2.0, -1.0, -0.2), (2.0, 1.0, 1.0), size=(500, 3))

    assert len(scene.primitives) == 4
    np.testing.assert_allclose(scene.signed_distance(pts), curb().signed_distance(pts), atol=1e-12)


def test_scene_file_round_trip(tmp_path):
    scene = continuous_ramps()
    path = tmp_path / "ramps.yaml"

    save_scene(scene, path)
    loaded = load_scene(path)

    pts = np.random.default_rng(1).uniform(-2.0, 2.0, size=(100, 3))
    np.testing.assert_allclose(loaded.signed_distance(pts), scene.signed_distance(pts), atol=1e-12)


def test_invalid_scene_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("primitives:\n  - {kind: torus}\n", encoding="utf-8")

    with pytest.raises(InvalidSceneError):
        load_scene(path)


def test_triangle_count_and_exact_surface_height():
    xs = np.arange(3) * 0.5
    ys = np.arange(4) * 0.5
    heights = 0.5 * xs[:, None] + 0.2 * ys[None, :]
    grid = HeightGrid(heights=heights, cell_size=0.5)

    assert grid.triangles().shape == (12, 3, 3)
    xy = np.random.default_rng(2).uniform((0.0, 0.0), (1.0, 1.5), size=(50, 2))
    np.testing.assert_allclose(
        grid.surface_height(xy), 0.5 * xy[:, 0] + 0.2 * xy[:, 1], atol=1e-12
    )


def test_random_heightmap_is_seeded_and_slope_bounded():
    a = random_heightmap(np.random.default_rng(11), n_steps=0, max_slope_deg=20.0)
    b = random_heightmap(np.random.default_rng(11), n_steps=0, max_slope_deg=20.0)
    c = random_heightmap(np.random.default_rng(12), n_steps=0, max_slope_deg=20.0)

    np.testing.assert_array_equal(a.heights, b.heights)
    assert not np.array_equal(a.heights, c.heights)
    gx, gy = np.gradient(a.heights, a.cell_size)
    assert np.max(np.hypot(gx, gy)) <= math.tan(math.radians(20.0)) + 1e-9


def test_heightmap_file_round_trip(tmp_path):
    grid = random_heightmap(np.random.default_rng(5))
    path = tmp_path / "relief.txt"

    save_heightmap(grid, path)
    loaded = load_heightmap(path)

    np.testing.assert_array_equal(loaded.heights, grid.heights)
    assert loaded.cell_size == grid.cell_size
    assert loaded.origin == grid.origin


def test_heightmap_without_header_is_rejected(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.0 0.1\n0.2 0.3\n", encoding="utf-8")

    with pytest.raises(InvalidGridError):
        load_heightmap(path)


def test_ragged_heightmap_is_rejected(tmp_path):
    path = tmp_path / "ragged.txt"
    path.write_text("# cell_size=0.1\n0.0 0.1\n0.2\n", encoding="utf-8")

    with pytest.raises(InvalidGridError):
        load_heightmap(path)
