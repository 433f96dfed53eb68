"""Support polygon hull and force-angle margins."""

import math

import numpy as np
import pytest

from app import transforms
from app.errors import CollinearContactsError, DegenerateAxisError
from app.stability import fasm_margin, min_stability, support_polygon


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _brute_force_hull(xy):
    """Directed edges (i, j) with every other point strictly on the left."""
    n = len(xy)
    edges = set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            e = xy[j] - xy[i]
            w = np.delete(xy, [i, j], axis=0) - xy[i]
            if np.all(e[0] * w[:, 1] - e[1] * w[:, 0] > 0):
                edges.add((i, j))
    return edges


def _square(h=0.3):
    contacts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    return contacts, np.array([0.5, 0.5, h])


def test_triangle_comes_out_counter_clockwise():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])

    poly = support_polygon(pts)

    assert poly.indices == [0, 2, 1]
    assert _signed_area(poly.vertices) > 0


def test_interior_point_is_dropped():
    pts = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.1]]
    )

    poly = support_polygon(pts)

    assert sorted(poly.indices) == [0, 1, 2, 3]
    assert poly.indices[0] == 0


def test_hull_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        pts = np.column_stack([rng.uniform(-1.0, 1.0, size=(12, 2)), rng.uniform(0.0, 0.2, 12)])

        poly = support_polygon(pts)

        edges = _brute_force_hull(pts[:, :2])
        idx = poly.indices
        assert {(idx[k], idx[(k + 1) % len(idx)]) for k in range(len(idx))} == edges


def test_duplicates_are_merged():
    pts = np.array([[0.0, 0.0, 0.0], [1e-7, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    poly = support_polygon(pts)

    assert len(poly.vertices) == 3


def test_collinear_contacts_report_the_extreme_pair():
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])

    with pytest.raises(CollinearContactsError) as exc:
        support_polygon(pts)

    assert exc.value.extreme_pair == (1, 2)


def test_two_distinct_points_are_collinear():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.3], [1.0, 1.0, 0.0]])

    with pytest.raises(CollinearContactsError) as exc:
        support_polygon(pts)

    assert exc.value.extreme_pair == (0, 2)


def test_hull_is_idempotent():
    pts = np.random.default_rng(7).uniform(-1.0, 1.0, size=(30, 3))

    first = support_polygon(pts)
    second = support_polygon(first.vertices)

    np.testing.assert_array_equal(second.vertices, first.vertices)


def test_margin_is_zero_with_com_above_the_axis():
    m = fasm_margin(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.array([0.5, 0.0, 1.0]))

    assert m == pytest.approx(0.0, abs=1e-15)


def test_zero_length_axis():
    with pytest.raises(DegenerateAxisError):
        fasm_margin(np.ones(3), np.ones(3), np.zeros(3))


def test_square_margins_are_equal_and_ties_pick_the_first():
    contacts, com = _square()

    result = min_stability(support_polygon(contacts), com)

    expected = math.atan2(0.5, 0.3) * math.hypot(0.5, 0.3)
    np.testing.assert_allclose(result.margins, expected, rtol=1e-12)
    assert result.stable
    assert result.argmin == 0


def test_equilateral_triangle_margins_are_equal():
    angles = np.radians([90.0, 210.0, 330.0])
    contacts = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(3)])

    result = min_stability(support_polygon(contacts), np.array([0.0, 0.0, 0.5]))

    np.testing.assert_allclose(result.margins, result.margins[0], rtol=1e-9)
    assert result.beta_min > 0


def test_com_outside_one_edge_goes_negative():
    contacts, _ = _square()

    result = min_stability(support_polygon(contacts), np.array([0.5, -0.2, 0.3]))

    # Edge 0 runs (0, 0) -> (1, 0)
    assert result.margins[0] < 0
    assert result.margins[2] > 0
    assert result.argmin == 0
    assert not result.stable


def test_margin_sign_matches_point_in_polygon_on_flat_ground():
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(1000):
        pts = np.column_stack([rng.uniform(-1.0, 1.0, size=(8, 2)), np.zeros(8)])
        poly = support_polygon(pts)
        com = np.array([*rng.uniform(-1.0, 1.0, size=2), 0.5])

        v = poly.vertices[:, :2]
        e = np.roll(v, -1, axis=0) - v
        w = com[:2] - v
        side = (e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]) / np.linalg.norm(e, axis=1)
        if np.min(np.abs(side)) < 1e-9:
            continue
        checked += 1
        assert min_stability(poly, com).stable == bool(np.all(side > 0))
    assert checked > 900


def test_margins_are_invariant_to_yaw_and_translation():
    rng = np.random.default_rng(4)
    pts = np.column_stack([rng.uniform(-1.0, 1.0, size=(10, 2)), rng.uniform(0.0, 0.1, 10)])
    com = np.array([0.1, -0.05, 0.4])
    base = min_stability(support_polygon(pts), com)

    T = transforms.make_transform(transforms.rot_z(0.7), (3.0, -2.0, 0.5))
    moved = min_stability(
        support_polygon(transforms.apply(T, pts)), transforms.apply(T, com[None, :])[0]
    )

    np.testing.assert_allclose(np.sort(moved.margins), np.sort(base.margins), atol=1e-9)


def test_scaling_about_the_com_keeps_sign_and_argmin():
    rng = np.random.default_rng(8)
    pts = np.column_stack([rng.uniform(-1.0, 1.0, size=(10, 2)), np.zeros(10)])
    com = np.array([0.3, 0.2, 0.6])
    base = min_stability(support_polygon(pts), com)

    scaled = min_stability(support_polygon(com + 2.0 * (pts - com)), com)

    assert np.array_equal(np.sign(scaled.margins), np.sign(base.margins))
    assert scaled.argmin == base.argmin
