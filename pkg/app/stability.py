"""Support polygon and force-angle stability margins under static gravity."""

from __future__ import annotations

import math

import numpy as np

from app.errors import CollinearContactsError, DegenerateAxisError
from app.models import ContactState, StabilityResult, SupportPolygon

GRAVITY = np.array([0.0, 0.0, -1.0])

# Contacts closer than this in XY are one vertex (m)
DEDUP_TOL = 1e-6


def _farthest_pair(xy: np.ndarray, idx: list[int]) -> tuple[int, int]:
    pts = xy[idx]
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    a, b = np.unravel_index(int(np.argmax(d2)), d2.shape)
    a, b = sorted((int(a), int(b)))
    return idx[a], idx[b]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def support_polygon(contacts: ContactState | np.ndarray) -> SupportPolygon:
    """Convex hull of the contacts projected onto world XY (Andrew's monotone chain).

    Vertices come out counter-clockwise starting from the lowest (x, y) point
    and keep their 3D positions. Collinear and duplicate points are dropped.
    """
    pts = contacts.contacts if isinstance(contacts, ContactState) else np.asarray(contacts, float)
    xy = pts[:, :2]
    n = len(xy)

    diff = xy[:, None, :] - xy[None, :, :]
    close = np.einsum("ijk,ijk->ij", diff, diff) <= DEDUP_TOL**2
    dropped = np.zeros(n, dtype=bool)
    if np.count_nonzero(close) > n:
        later = np.arange(n)
        for i in range(n):
            if not dropped[i]:
                dropped |= close[i] & (later > i)
    keep = np.flatnonzero(~dropped).tolist()
    if len(keep) < 3:
        pair = _farthest_pair(xy, keep) if keep else (0, 0)
        raise CollinearContactsError(f"{len(keep)} distinct contacts in XY", pair)

    p = xy.tolist()
    order = sorted(keep, key=lambda i: (p[i][0], p[i][1], i))
    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and _cross(p[lower[-2]], p[lower[-1]], p[i]) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(order):
        while len(upper) >= 2 and _cross(p[upper[-2]], p[upper[-1]], p[i]) <= 0:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]

    a, b = _farthest_pair(xy, hull if len(hull) >= 2 else keep)
    if len(hull) < 3:
        raise CollinearContactsError("Contacts are collinear in XY", (a, b))
    # Slivers thinner than the dedup tolerance count as collinear too
    line = xy[b] - xy[a]
    offsets = np.abs(line[0] * (xy[hull, 1] - xy[a, 1]) - line[1] * (xy[hull, 0] - xy[a, 0]))
    if np.max(offsets) / np.linalg.norm(line) < DEDUP_TOL:
        raise CollinearContactsError("Contacts are collinear in XY", (a, b))

    return SupportPolygon(vertices=pts[hull].copy(), indices=hull)


def fasm_margin(
    tail: np.ndarray,
    head: np.ndarray,
    com: np.ndarray,
    gravity: np.ndarray = GRAVITY,
) -> float:
    """Margin of the tipover axis tail -> head, counter-clockwise polygon side on the left.

    The angle between gravity and the axis-to-CoM lever, both projected onto
    the plane normal to the axis, scaled by the lever length. Positive while
    the line of action through the CoM stays inside the polygon.
    """
    edge = np.asarray(head, float) - np.asarray(tail, float)
    length = float(np.linalg.norm(edge))
    if length < 1e-12:
        raise DegenerateAxisError("Tipover axis has zero length")
    e = edge / length
    lever = np.asarray(com, float) - tail
    lever = lever - (lever @ e) * e
    f = np.asarray(gravity, float)
    f = f - (f @ e) * e
    theta = math.atan2(float(np.cross(-lever, f) @ e), float(-lever @ f))
    return theta * float(np.linalg.norm(lever))


def min_stability(
    polygon: SupportPolygon, com: np.ndarray, gravity: np.ndarray = GRAVITY
) -> StabilityResult:
    v = polygon.vertices
    n = len(v)
    margins = np.array([fasm_margin(v[i], v[(i + 1) % n], com, gravity) for i in range(n)])
    # np.argmin returns the first minimum, so ties go to the lowest axis index
    k = int(np.argmin(margins))
    return StabilityResult(margins=margins, beta_min=float(margins[k]), argmin=k)
