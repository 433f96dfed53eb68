"""Iterative pose prediction on an ESDF.

A query (x, y, yaw, z_hint) is first dropped vertically until one candidate
touches the surface without any penetrating (falling stage). The contacts
then decide a tipover axis: the lever for one contact, the connecting line
for two, the least stable support polygon edge for three or more. The robot
is rotated about that axis until a new candidate touches (rotation stage),
and the loop repeats until the support polygon is stable.
"""

from __future__ import annotations

import logging
import time

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app import transforms
from app.errors import (
    AllCandidatesExcludedError,
    CollinearContactsError,
    DegenerateAxisError,
    NoConvergenceError,
    NumericalDomainError,
    OutOfBoundsError,
)
from app.filters import (
    contact_mask,
    is_valid_contact,
    merge_contacts,
    outermost_touching,
    rotation_exclusions,
)
from app.models import (
    ContactState,
    JointConfig,
    PredictionResult,
    QueryPose,
    SettlingParams,
    StabilityResult,
    SupportPolygon,
)
from app.robot_model import RobotModel, center_of_mass, contact_candidates
from app.sdf_map import EsdfMap
from app.settings import settings
from app.stability import DEDUP_TOL, GRAVITY, min_stability, support_polygon

logger = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, 1.0])
# Heading offset (rad) that picks a tipping direction when the CoM sits right above one contact
PERTURBATION = 1e-3
_ARCCOS_TOL = 1e-9


class SettlingState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    pose: np.ndarray = Field(..., description="T_W_C, 4x4")
    step: float = Field(1.0, gt=0, le=1, description="step factor, decays by h_f")
    iteration: int = Field(0, ge=0)
    distances: np.ndarray | None = Field(None, description="candidate distances at `pose` (m)")


class RotationAxis(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    anchor: np.ndarray = Field(..., description="point on the axis in W")
    direction: np.ndarray = Field(..., description="unit direction in W")
    contact_indices: list[int] = Field(default_factory=list)
    stability: StabilityResult | None = None


class RotationStep(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    axis: RotationAxis
    frame_R: np.ndarray = Field(..., description="T_W_R; x along the axis, z up, y toward the CoM")
    included: np.ndarray = Field(..., description="candidates taking part in the stage")
    alphas: np.ndarray = Field(default_factory=lambda: np.empty(0))
    signs: np.ndarray = Field(default_factory=lambda: np.empty(0))
    predicted_contacts: np.ndarray = Field(default_factory=lambda: np.empty((0, 3)))
    alpha_min: float = 0.0
    iterations: int = 0


def _evaluate(esdf: EsdfMap, candidates: np.ndarray, pose: np.ndarray):
    points = transforms.apply(pose, candidates)
    d, inside = esdf.sample(points)
    if not inside.any():
        raise OutOfBoundsError("Every contact candidate left the map")
    return points, d


def falling_stage(
    esdf: EsdfMap,
    candidates: np.ndarray,
    state: SettlingState,
    params: SettlingParams,
) -> SettlingState:
    """Translate along world z by -step * d_min until the contact condition holds.

    `candidates` are the robot's contact candidates in frame C. A negative
    d_min lifts the robot by the whole -d_min and leaves the step factor as
    it is; the decay only applies to downward moves.
    """
    pose = state.pose.copy()
    step = state.step
    for k in range(params.max_fall_iters + 1):
        _, d = _evaluate(esdf, candidates, pose)
        if is_valid_contact(d, params.epsilon, params.numerical_slack):
            logger.debug("Falling stage done after %d iterations, z=%.4f", k, pose[2, 3])
            return SettlingState(
                pose=pose, step=step, iteration=state.iteration + k, distances=d
            )
        if k == params.max_fall_iters:
            break
        d_min = float(np.min(d))
        if d_min < 0:
            pose[2, 3] -= d_min
        else:
            pose[2, 3] -= step * d_min
            step *= params.step_decay
    raise NoConvergenceError(f"Falling stage exceeded {params.max_fall_iters} iterations")


def _single_contact_axis(contact: np.ndarray, com_W: np.ndarray, index: int) -> RotationAxis:
    r = np.cross(com_W - contact, GRAVITY)
    norm = float(np.linalg.norm(r))
    if norm < 1e-9:
        raise DegenerateAxisError("Contact lies vertically below the CoM")
    return RotationAxis(anchor=contact.copy(), direction=r / norm, contact_indices=[index])


def _pair_axis(contacts: np.ndarray, com_W: np.ndarray, i: int, j: int) -> RotationAxis:
    r = contacts[j] - contacts[i]
    if np.hypot(r[0], r[1]) <= DEDUP_TOL:
        # Stacked contacts act as one
        return _single_contact_axis(contacts[i], com_W, i)
    return RotationAxis(
        anchor=contacts[i].copy(), direction=r / np.linalg.norm(r), contact_indices=[i, j]
    )


def compute_rotation_axis(
    contacts: ContactState | np.ndarray, com_W: np.ndarray
) -> RotationAxis | StabilityResult:
    """Tipover axis for the current contacts, or the stability result when stable."""
    pts = contacts.contacts if isinstance(contacts, ContactState) else np.asarray(contacts, float)
    com_W = np.asarray(com_W, dtype=float)
    n = len(pts)
    if n == 0:
        raise DegenerateAxisError("No contacts")
    if n == 1:
        return _single_contact_axis(pts[0], com_W, 0)
    if n == 2:
        return _pair_axis(pts, com_W, 0, 1)
    try:
        polygon = support_polygon(pts)
    except CollinearContactsError as e:
        i, j = e.extreme_pair
        if i == j:
            return _single_contact_axis(pts[i], com_W, i)
        return _pair_axis(pts, com_W, i, j)
    result = min_stability(polygon, com_W)
    if result.stable:
        return result
    k, m = result.argmin, len(polygon.indices)
    a, b = polygon.indices[k], polygon.indices[(k + 1) % m]
    direction = pts[b] - pts[a]
    return RotationAxis(
        anchor=pts[a].copy(),
        direction=direction / np.linalg.norm(direction),
        contact_indices=[a, b],
        stability=result,
    )


def perturbed_axis(contact: np.ndarray, pose: np.ndarray) -> RotationAxis:
    """Axis for a single contact right below the CoM.

    The lever is taken as the body heading projected on the ground, turned
    by PERTURBATION about world z.
    """
    heading = pose[:3, 0].copy()
    heading[2] = 0.0
    if np.linalg.norm(heading) < 1e-9:
        heading = np.array([1.0, 0.0, 0.0])
    lever = transforms.rot_z(PERTURBATION) @ (heading / np.linalg.norm(heading))
    r = np.cross(lever, GRAVITY)
    return RotationAxis(anchor=contact.copy(), direction=r / np.linalg.norm(r), contact_indices=[0])


def axis_frame(axis: RotationAxis, com_W: np.ndarray) -> np.ndarray:
    """T_W_R with x along the axis, z as close to world up as possible, y toward the CoM."""
    x = axis.direction / np.linalg.norm(axis.direction)
    z = UP - (UP @ x) * x
    nz = float(np.linalg.norm(z))
    if nz < 1e-6:
        raise DegenerateAxisError("Rotation axis is vertical")
    z /= nz
    y = np.cross(z, x)
    if y @ (com_W - axis.anchor) < 0:
        x, y = -x, -y
    return transforms.make_transform(np.column_stack([x, y, z]), axis.anchor)


def rotation_angle(points_R, distances, predicted=None):
    """Angle (alpha, sigma) that brings each candidate onto its predicted contact.

    Points are in frame R. The predicted contact defaults to the point moved
    down by its distance along R's z. Radii are measured about the axis in
    R's y-z plane and the angle follows from the law of cosines; sigma is -1
    for penetrating candidates. Returns floats for a single point, arrays
    otherwise.
    """
    single = np.ndim(points_R) == 1
    p = np.atleast_2d(np.asarray(points_R, dtype=float))
    d = np.atleast_1d(np.asarray(distances, dtype=float))
    if predicted is None:
        c = p.copy()
        c[:, 2] -= d
    else:
        c = np.atleast_2d(np.asarray(predicted, dtype=float))
    rho_p = np.hypot(p[:, 1], p[:, 2])
    rho_c = np.hypot(c[:, 1], c[:, 2])
    chord = np.hypot(p[:, 1] - c[:, 1], p[:, 2] - c[:, 2])
    sign = np.where(d >= 0, 1.0, -1.0)
    denom = 2.0 * rho_p * rho_c
    on_axis = denom < 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(on_axis, -1.0, (rho_p**2 + rho_c**2 - chord**2) / denom)
    if np.any(np.abs(arg) > 1.0 + _ARCCOS_TOL):
        worst = float(np.max(np.abs(arg)))
        raise NumericalDomainError(f"arccos argument {worst:.12g} outside [-1, 1]")
    # A predicted contact on the axis is never reached; pi keeps it off the minimum
    alpha = sign * np.arccos(np.clip(arg, -1.0, 1.0))
    if single:
        return float(alpha[0]), float(sign[0])
    return alpha, sign


def surface_normals(esdf: EsdfMap, points_W: np.ndarray, degenerate_norm: float) -> np.ndarray:
    """Unit ESDF gradients by central differences; world up where degenerate or off-map."""
    h = esdf.voxel_size / 2
    n = len(points_W)
    offsets = np.concatenate([h * np.eye(3), -h * np.eye(3)])
    stencil = (points_W[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    values, inside = esdf.sample(stencil)
    values = values.reshape(n, 6)
    ok = inside.reshape(n, 6).all(axis=1)
    g = np.where(ok[:, None], (values[:, :3] - values[:, 3:]) / (2 * h), 0.0)
    norm = np.linalg.norm(g, axis=1)
    good = ok & (norm > degenerate_norm)
    out = np.tile(UP, (n, 1))
    out[good] = g[good] / norm[good, None]
    return out


def _predicted_contacts(esdf, points_W, points_R, d, T_R_W, params: SettlingParams):
    if params.contact_model == "vertical":
        c = points_R.copy()
        c[:, 2] -= d
        return c
    normals_R = surface_normals(esdf, points_W, settings.gradient_degenerate_norm) @ T_R_W[:3, :3].T
    return points_R - d[:, None] * normals_R


def rotation_stage(
    esdf: EsdfMap,
    candidates: np.ndarray,
    state: SettlingState,
    axis: RotationAxis,
    com_W: np.ndarray,
    params: SettlingParams,
) -> tuple[SettlingState, RotationStep]:
    """Rotate about `axis` by -step * alpha_min until an included candidate touches.

    A candidate already touching on the CoM side of the axis would sink as
    soon as the robot turns, so the axis is first moved parallel onto the
    outermost such candidate while the CoM stays beyond it. Exclusions are
    fixed at stage entry, penetration is checked over every candidate and
    the step factor restarts at 1.
    """
    T_W_R = axis_frame(axis, com_W)
    T_R_W = transforms.invert(T_W_R)
    pose = state.pose.copy()
    step = 1.0

    points_W, d = _evaluate(esdf, candidates, pose)
    points_R = transforms.apply(T_R_W, points_W)
    tol = params.axis_membership_tol
    pivot = outermost_touching(points_R, contact_mask(d, params.epsilon), tol)
    com_y = float(transforms.apply(T_R_W, com_W[None, :])[0, 1])
    if pivot is not None and points_R[pivot, 1] < com_y - tol:
        logger.debug("Pivot moved %.4f m toward the CoM", points_R[pivot, 1])
        axis = RotationAxis(
            anchor=points_W[pivot].copy(),
            direction=axis.direction,
            contact_indices=axis.contact_indices,
            stability=axis.stability,
        )
        T_W_R = axis_frame(axis, com_W)
        T_R_W = transforms.invert(T_W_R)
        points_R = transforms.apply(T_R_W, points_W)
    included = ~rotation_exclusions(points_R, tol)
    if not included.any():
        raise AllCandidatesExcludedError("No candidate left on the falling side of the axis")

    record = RotationStep(axis=axis, frame_R=T_W_R, included=included)
    for k in range(params.max_rot_iters_per_axis + 1):
        if k > 0:
            points_W, d = _evaluate(esdf, candidates, pose)
            points_R = transforms.apply(T_R_W, points_W)
        usable = included & np.isfinite(d)
        if not usable.any():
            raise AllCandidatesExcludedError("Every included candidate left the map")
        if is_valid_contact(d, params.epsilon, params.numerical_slack, mask=usable):
            record.iterations = k
            logger.debug("Rotation stage done after %d iterations", k)
            return (
                SettlingState(pose=pose, step=step, iteration=state.iteration + k, distances=d),
                record,
            )
        if k == params.max_rot_iters_per_axis:
            break
        c_hat = _predicted_contacts(
            esdf, points_W[usable], points_R[usable], d[usable], T_R_W, params
        )
        alphas, signs = rotation_angle(points_R[usable], d[usable], c_hat)
        j = int(np.argmin(alphas))
        record.alphas, record.signs = alphas, signs
        record.predicted_contacts, record.alpha_min = c_hat, float(alphas[j])
        rotation = transforms.make_transform(transforms.rot_x(-step * alphas[j]))
        pose = transforms.orthonormalize(T_W_R @ rotation @ T_R_W @ pose)
        step *= params.step_decay
    raise NoConvergenceError(
        f"Rotation stage exceeded {params.max_rot_iters_per_axis} iterations"
    )


def predict_pose(
    esdf: EsdfMap,
    model: RobotModel,
    q: JointConfig,
    query: QueryPose,
    params: SettlingParams | None = None,
) -> PredictionResult:
    """Settle the robot at `query` and return the static pose T_W_C.

    Failure modes come back as the result status, never as exceptions:
    OutOfMap when every candidate leaves the map, NoConvergence when a cap is
    hit, Degenerate when no usable candidate or axis remains.
    """
    params = params or SettlingParams()
    start = time.perf_counter_ns()
    candidates = contact_candidates(model, q).points
    com_C = center_of_mass(model, q)

    pose = query.initial_transform()
    state: SettlingState | None = None
    contacts: ContactState | None = None
    stability: StabilityResult | None = None
    polygon: SupportPolygon | None = None
    fall_iters = stages = rot_iters = 0
    status, message = "NoConvergence", None

    try:
        if len(candidates) == 0:
            raise AllCandidatesExcludedError("Model has no contact candidates")
        state = falling_stage(esdf, candidates, SettlingState(pose=pose), params)
        fall_iters = state.iteration
        for stage in range(params.max_rotation_stages + 1):
            if not is_valid_contact(state.distances, params.epsilon, params.numerical_slack):
                state = falling_stage(esdf, candidates, SettlingState(pose=state.pose), params)
                fall_iters += state.iteration
            points_W = transforms.apply(state.pose, candidates)
            contacts = merge_contacts(
                points_W, state.distances, params.epsilon, params.contact_merge_radius
            )
            com_W = transforms.apply(state.pose, com_C[None, :])[0]
            try:
                axis = compute_rotation_axis(contacts, com_W)
            except DegenerateAxisError:
                if contacts.count != 1:
                    raise
                axis = perturbed_axis(contacts.contacts[0], state.pose)
            if isinstance(axis, StabilityResult):
                stability = axis
                polygon = support_polygon(contacts)
                status = "Converged"
                break
            if stage == params.max_rotation_stages:
                raise NoConvergenceError(
                    f"Still unstable after {params.max_rotation_stages} rotation stages"
                )
            logger.debug(
                "Stage %d: %d contacts, axis through %s along %s",
                stage, contacts.count, np.round(axis.anchor, 4), np.round(axis.direction, 4),
            )
            state, step = rotation_stage(esdf, candidates, state, axis, com_W, params)
            stages += 1
            rot_iters += step.iterations
    except OutOfBoundsError as e:
        status, message = "OutOfMap", str(e)
    except NoConvergenceError as e:
        status, message = "NoConvergence", str(e)
    except (AllCandidatesExcludedError, DegenerateAxisError, NumericalDomainError) as e:
        status, message = "Degenerate", str(e)

    final_pose = state.pose if state is not None else pose
    elapsed_us = (time.perf_counter_ns() - start) / 1000.0
    if status != "Converged":
        logger.debug("Query (%.3f, %.3f, %.3f): %s (%s)", query.x, query.y, query.yaw, status, message)
    return PredictionResult(
        pose=final_pose,
        status=status,
        contacts=contacts,
        stability=stability,
        polygon=polygon,
        fall_iters=fall_iters,
        rotation_stages=stages,
        total_rot_iters=rot_iters,
        elapsed_us=elapsed_us,
        distances=state.distances if state is not None else None,
        message=message,
    )
