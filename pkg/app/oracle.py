"""Brute-force settling: the lowest-CoM stable pose on a (z, roll, pitch) grid.

For every grid orientation at the query's (x, y, yaw) the lowest
non-penetrating z is found by bisection over the z grid. This treats
penetration as monotone in z, which holds for terrain without overhangs.
Orientations are then visited by increasing CoM height (ties: lower z,
smaller |roll|, smaller |pitch|) and the first one with a contact and a
positive stability margin wins.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from app import transforms
from app.errors import CollinearContactsError, NoFeasiblePoseError
from app.filters import merge_contacts
from app.models import JointConfig, OracleParams, PredictionResult, QueryPose
from app.robot_model import RobotModel, center_of_mass, contact_candidates
from app.sdf_map import EsdfMap
from app.settings import settings
from app.stability import min_stability, support_polygon

logger = logging.getLogger(__name__)

# Candidate points evaluated per batch
_BATCH_POINTS = 1_000_000


def angle_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """Multiples of `step` inside [lo, hi]; always contains 0 when the range does."""
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    return np.arange(k0, k1 + 1) * step


def _distances(esdf: EsdfMap, points: np.ndarray) -> np.ndarray:
    d, inside = esdf.sample(points)
    # Below the map is solid ground, above it free space
    below = ~inside & (points[:, 2] < esdf.origin[2])
    d[below] = -np.inf
    return d


def _lowest_feasible(
    esdf: EsdfMap, offsets: np.ndarray, z_values: np.ndarray, tol: float
) -> np.ndarray:
    """Index of the lowest feasible z per orientation, -1 when none is."""
    B, N, _ = offsets.shape

    def feasible(sel: np.ndarray, iz: np.ndarray) -> np.ndarray:
        pts = offsets[sel].copy()
        pts[:, :, 2] += z_values[iz][:, None]
        d = _distances(esdf, pts.reshape(-1, 3)).reshape(len(iz), N)
        return d.min(axis=1) >= -tol

    everyone = np.arange(B)
    lo = np.full(B, -1)
    hi = np.full(B, len(z_values) - 1)
    top_ok = feasible(everyone, hi)
    active = top_ok & (hi - lo > 1)
    while active.any():
        sel = np.flatnonzero(active)
        mid = (lo[sel] + hi[sel]) // 2
        ok = feasible(sel, mid)
        hi[sel] = np.where(ok, mid, hi[sel])
        lo[sel] = np.where(ok, lo[sel], mid)
        active = top_ok & (hi - lo > 1)
    return np.where(top_ok, hi, -1)


def settle_bruteforce(
    esdf: EsdfMap,
    model: RobotModel,
    q: JointConfig,
    query: QueryPose,
    params: OracleParams | None = None,
) -> PredictionResult:
    params = params or OracleParams()
    start = time.perf_counter_ns()
    candidates = contact_candidates(model, q).points
    com_C = center_of_mass(model, q)

    z_lo, z_hi = params.z_range or (float(esdf.origin[2]), float(esdf.upper[2]))
    z_values = z_lo + np.arange(int(math.floor((z_hi - z_lo) / params.z_step + 1e-9)) + 1) * params.z_step
    rolls = angle_grid(*params.roll_range, params.angle_step)
    pitches = angle_grid(*params.pitch_range, params.angle_step)
    roll_g, pitch_g = (g.ravel() for g in np.meshgrid(rolls, pitches, indexing="ij"))
    rotations = [
        transforms.from_yaw_pitch_roll(query.yaw, p, r) for r, p in zip(roll_g, pitch_g)
    ]
    xy = np.array([query.x, query.y, 0.0])

    batch = max(1, _BATCH_POINTS // max(len(candidates), 1))
    chunks = [range(s, min(s + batch, len(rotations))) for s in range(0, len(rotations), batch)]

    def run(chunk: range) -> np.ndarray:
        offsets = np.stack([candidates @ rotations[i].T + xy for i in chunk])
        return _lowest_feasible(esdf, offsets, z_values, params.penetration_tol)

    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            lowest = np.concatenate(list(pool.map(run, chunks)))
    else:
        lowest = np.concatenate([run(c) for c in chunks])

    found = np.flatnonzero(lowest >= 0)
    logger.debug(
        "Oracle grid: %d orientations x %d heights, %d with a feasible height",
        len(rotations), len(z_values), len(found),
    )
    z_best = z_values[lowest[found]]
    com_height = z_best + np.array([(rotations[i] @ com_C)[2] for i in found])
    order = np.lexsort(
        (np.abs(pitch_g[found]), np.abs(roll_g[found]), z_best, com_height)
    )

    for k in order:
        i = found[k]
        pose = transforms.make_transform(rotations[i], (query.x, query.y, z_best[k]))
        points = transforms.apply(pose, candidates)
        d = _distances(esdf, points)
        contacts = merge_contacts(points, d, params.epsilon, settings.contact_merge_radius)
        if contacts.count < 3:
            continue
        try:
            polygon = support_polygon(contacts)
        except CollinearContactsError:
            continue
        com_W = transforms.apply(pose, com_C[None, :])[0]
        stability = min_stability(polygon, com_W)
        if not stability.stable:
            continue
        return PredictionResult(
            pose=pose,
            status="Converged",
            contacts=contacts,
            stability=stability,
            polygon=polygon,
            elapsed_us=(time.perf_counter_ns() - start) / 1000.0,
            distances=d,
        )
    raise NoFeasiblePoseError(
        f"No stable pose on the grid at ({query.x:.3f}, {query.y:.3f}, yaw {query.yaw:.3f})"
    )
