"""Kinematic tree of a tracked robot with flippers.

The body frame C is pinned at the center of mass of the reference
configuration (all joints at 0) with the chassis axes. It does not move with
the joints; the instantaneous CoM moves inside it. Contact candidates are
sampled once per link in link coordinates at load time and only transformed
per query.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    field_validator,
    model_validator,
)

from app import transforms
from app.errors import (
    CycleInKinematicTreeError,
    JointOutOfLimitsError,
    MissingParentError,
    ParseError,
    UnknownJointError,
)
from app.models import JointConfig
from app.settings import settings

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data" / "robots"

Vec3 = tuple[float, float, float]


def _count(length: float, spacing: float) -> int:
    """Samples needed so that neighbours are at most `spacing` apart, ends included."""
    if length <= 0:
        return 1
    return int(math.ceil(length / spacing - 1e-9)) + 1


def _across(width: float, center: float, spacing: float) -> np.ndarray:
    n = _count(width, spacing)
    if n == 1:
        return np.array([center])
    return np.linspace(center - width / 2, center + width / 2, n)


class PointGeometry(BaseModel):
    kind: Literal["point"] = "point"
    offset: Vec3 = (0.0, 0.0, 0.0)

    def sample(self, spacing: float) -> np.ndarray:
        return np.array([self.offset], dtype=float)


class BoxGeometry(BaseModel):
    """Box whose underside (the face at minimum link z) is ground facing."""

    kind: Literal["box"] = "box"
    size: Vec3
    offset: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("size")
    @classmethod
    def validate_size(cls, v):
        if min(v) < 0:
            raise ValueError("Box size must be non-negative")
        return v

    def sample(self, spacing: float) -> np.ndarray:
        sx, sy, sz = self.size
        ox, oy, oz = self.offset
        xs = _across(sx, ox, spacing)
        ys = _across(sy, oy, spacing)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        Z = np.full_like(X, oz - sz / 2)
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


class CylinderGeometry(BaseModel):
    """Wheel-like cylinder with its axis along link y; the lower half is sampled."""

    kind: Literal["cylinder"] = "cylinder"
    radius: float = Field(..., gt=0)
    width: float = Field(..., ge=0)
    offset: Vec3 = (0.0, 0.0, 0.0)

    def sample(self, spacing: float) -> np.ndarray:
        n = _count(math.pi * self.radius, spacing)
        theta = np.linspace(math.pi, 2 * math.pi, n)
        outline = np.stack([self.radius * np.cos(theta), self.radius * np.sin(theta)], axis=1)
        ox, oy, oz = self.offset
        return _extrude(outline + (ox, oz), _across(self.width, oy, spacing))


class TrackGeometry(BaseModel):
    """Belt around a rear and a front wheel in the link x-z plane.

    `rear`/`front` are (x, z, radius). The outline sampled is the rear end
    arc, the lower run and the front end arc; the upper run is not ground
    facing.
    """

    kind: Literal["track"] = "track"
    rear: Vec3
    front: Vec3
    width: float = Field(..., ge=0)
    y: float = 0.0

    @model_validator(mode="after")
    def validate_wheels(self):
        (x1, z1, r1), (x2, z2, r2) = self.rear, self.front
        if r1 <= 0 or r2 <= 0:
            raise ValueError("Track wheel radii must be positive")
        if math.hypot(x2 - x1, z2 - z1) <= abs(r2 - r1):
            raise ValueError("Track wheels overlap; no outer tangent exists")
        return self

    def outline(self, spacing: float) -> np.ndarray:
        (x1, z1, r1), (x2, z2, r2) = self.rear, self.front
        c1, c2 = np.array([x1, z1]), np.array([x2, z2])
        length = float(np.linalg.norm(c2 - c1))
        u = (c2 - c1) / length
        v = np.array([-u[1], u[0]])
        a = (r2 - r1) / length
        b = math.sqrt(1.0 - a * a)
        # Angle of the upper tangent point in the (u, v) frame of each wheel
        theta_top = math.atan2(b, -a)

        def arc(center, radius, start, stop):
            n = _count(radius * abs(stop - start), spacing)
            t = np.linspace(start, stop, n)
            return center + radius * (np.cos(t)[:, None] * u + np.sin(t)[:, None] * v)

        rear_arc = arc(c1, r1, theta_top, 2 * math.pi - theta_top)
        front_arc = arc(c2, r2, -theta_top, theta_top)
        run_start, run_end = rear_arc[-1], front_arc[0]
        n_run = _count(float(np.linalg.norm(run_end - run_start)), spacing)
        run = np.linspace(run_start, run_end, n_run)
        return np.concatenate([rear_arc, run[1:-1], front_arc])

    def sample(self, spacing: float) -> np.ndarray:
        return _extrude(self.outline(spacing), _across(self.width, self.y, spacing))


def _extrude(outline_xz: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Outline-major ordering: every y sample of one outline point, then the next."""
    n, m = len(outline_xz), len(ys)
    out = np.empty((n * m, 3))
    out[:, 0] = np.repeat(outline_xz[:, 0], m)
    out[:, 1] = np.tile(ys, n)
    out[:, 2] = np.repeat(outline_xz[:, 1], m)
    return out


Geometry = Annotated[
    Union[PointGeometry, BoxGeometry, CylinderGeometry, TrackGeometry],
    Field(discriminator="kind"),
]


class Origin(BaseModel):
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        return transforms.from_xyz_rpy(self.xyz, self.rpy)


class Link(BaseModel):
    name: str
    mass: float = Field(0.0, ge=0, description="kg")
    com: Vec3 = Field((0.0, 0.0, 0.0), description="CoM in link frame (m)")
    geometry: Geometry | None = None


class Joint(BaseModel):
    name: str
    type: Literal["revolute", "fixed"] = "revolute"
    parent: str
    child: str
    origin: Origin = Field(default_factory=Origin)
    axis: Vec3 = (0.0, 1.0, 0.0)
    limits: tuple[float, float] = (-math.pi, math.pi)
    # A mimic joint copies the position of the named joint (coupled flippers)
    mimic: str | None = None

    @field_validator("axis")
    @classmethod
    def validate_axis(cls, v):
        if abs(math.sqrt(sum(c * c for c in v)) - 1.0) > 1e-6:
            raise ValueError("Joint axis must have unit norm")
        return v

    @field_validator("limits")
    @classmethod
    def validate_limits(cls, v):
        if not v[0] <= v[1]:
            raise ValueError("Joint limits need lower <= upper")
        return v


class CandidateSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    points: np.ndarray = Field(..., description="(N, 3) in frame C (m)")
    link_index: np.ndarray = Field(..., description="(N,) index into RobotModel.links")

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


class RobotModel(BaseModel):
    name: str = "robot"
    links: list[Link] = Field(..., min_length=1)
    joints: list[Joint] = Field(default_factory=list)
    candidate_spacing: float = Field(
        default_factory=lambda: settings.candidate_spacing, gt=0, description="m"
    )

    _root: str = PrivateAttr()
    _order: list[Joint] = PrivateAttr()
    _link_index: dict[str, int] = PrivateAttr()
    _origins: dict[str, np.ndarray] = PrivateAttr()
    _samples: list[np.ndarray] = PrivateAttr()
    _T_C_B: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def validate_tree(self):
        self._link_index = {}
        for i, link in enumerate(self.links):
            if link.name in self._link_index:
                raise ParseError(f"Duplicate link {link.name!r}")
            self._link_index[link.name] = i
        joint_names = {j.name for j in self.joints}
        if len(joint_names) != len(self.joints):
            raise ParseError("Duplicate joint names")

        child_of: dict[str, Joint] = {}
        for j in self.joints:
            if j.parent == j.child:
                raise CycleInKinematicTreeError(f"Joint {j.name!r} connects {j.parent!r} to itself")
            if j.parent not in self._link_index:
                raise MissingParentError(f"Joint {j.name!r}: unknown parent link {j.parent!r}")
            if j.child not in self._link_index:
                raise ParseError(f"Joint {j.name!r}: unknown child link {j.child!r}")
            if j.child in child_of:
                raise ParseError(f"Link {j.child!r} has more than one parent joint")
            child_of[j.child] = j
            if j.mimic is not None:
                target = next((t for t in self.joints if t.name == j.mimic), None)
                if target is None or target.mimic is not None or target.type != "revolute":
                    raise ParseError(f"Joint {j.name!r} mimics invalid joint {j.mimic!r}")

        roots = [link.name for link in self.links if link.name not in child_of]
        if not roots:
            raise CycleInKinematicTreeError("Every link has a parent joint")
        if len(roots) > 1:
            raise ParseError(f"Kinematic tree has several roots: {roots}")
        self._root = roots[0]

        # Breadth-first from the root; links never reached sit on a cycle
        order: list[Joint] = []
        frontier = [self._root]
        reached = {self._root}
        while frontier:
            nxt = []
            for parent in frontier:
                for j in self.joints:
                    if j.parent == parent and j.child not in reached:
                        order.append(j)
                        reached.add(j.child)
                        nxt.append(j.child)
            frontier = nxt
        if len(reached) != len(self.links):
            missing = sorted(set(self._link_index) - reached)
            raise CycleInKinematicTreeError(f"Links on a cycle: {missing}")
        self._order = order

        if self.total_mass <= 0:
            raise ParseError("Total mass must be positive")

        self._origins = {j.name: j.origin.matrix() for j in self.joints}
        self._samples = [
            link.geometry.sample(self.candidate_spacing)
            if link.geometry is not None
            else np.empty((0, 3))
            for link in self.links
        ]
        self._T_C_B = np.eye(4)
        ref_com_B = self._com_in(self._link_transforms_B(JointConfig()))
        self._T_C_B = transforms.make_transform(translation=-ref_com_B)
        return self

    @property
    def root(self) -> str:
        return self._root

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def actuated_joints(self) -> list[Joint]:
        return [j for j in self.joints if j.type == "revolute" and j.mimic is None]

    def depth(self) -> int:
        """Number of joints on the longest root-to-leaf path."""
        level = {self._root: 0}
        for j in self._order:
            level[j.child] = level[j.parent] + 1
        return max(level.values())

    def check_config(self, q: JointConfig) -> None:
        actuated = {j.name: j for j in self.actuated_joints}
        for name, value in q.positions.items():
            joint = actuated.get(name)
            if joint is None:
                raise UnknownJointError(f"{name!r} is not an independent revolute joint")
            lo, hi = joint.limits
            if not lo <= value <= hi:
                raise JointOutOfLimitsError(
                    f"Joint {name!r} at {value:.4f} rad outside [{lo:.4f}, {hi:.4f}]"
                )

    def _link_transforms_B(self, q: JointConfig) -> dict[str, np.ndarray]:
        out = {self._root: np.eye(4)}
        for j in self._order:
            T = out[j.parent] @ self._origins[j.name]
            if j.type == "revolute":
                angle = q.get(j.mimic or j.name)
                if angle != 0.0:
                    T = T @ transforms.make_transform(transforms.axis_angle(j.axis, angle))
            out[j.child] = T
        return out

    def _com_in(self, link_T: dict[str, np.ndarray]) -> np.ndarray:
        acc = np.zeros(3)
        for link in self.links:
            if link.mass > 0:
                acc += link.mass * transforms.apply(link_T[link.name], np.array([link.com]))[0]
        return acc / self.total_mass


def forward_kinematics(model: RobotModel, q: JointConfig) -> dict[str, np.ndarray]:
    """Transform T_C_link of every link for configuration q."""
    model.check_config(q)
    T_C_B = model._T_C_B
    return {name: T_C_B @ T for name, T in model._link_transforms_B(q).items()}


def contact_candidates(model: RobotModel, q: JointConfig) -> CandidateSet:
    """Ground-facing samples in frame C, ordered by link then by outline position."""
    link_T = forward_kinematics(model, q)
    chunks, owners = [], []
    for i, link in enumerate(model.links):
        local = model._samples[i]
        if len(local) == 0:
            continue
        chunks.append(transforms.apply(link_T[link.name], local))
        owners.append(np.full(len(local), i, dtype=np.intp))
    if not chunks:
        return CandidateSet(points=np.empty((0, 3)), link_index=np.empty(0, dtype=np.intp))
    return CandidateSet(points=np.concatenate(chunks), link_index=np.concatenate(owners))


def center_of_mass(model: RobotModel, q: JointConfig) -> np.ndarray:
    return model._com_in(forward_kinematics(model, q))


def load_model(config: str) -> RobotModel:
    """Parse a robot description given as YAML text."""
    try:
        data = yaml.safe_load(config)
    except yaml.YAMLError as e:
        raise ParseError(f"Robot config is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ParseError("Robot config must be a mapping")
    try:
        model = RobotModel.model_validate(data)
    except ValidationError as e:
        raise ParseError(str(e)) from e
    logger.debug(
        "Loaded robot %s: %d links, %d joints", model.name, len(model.links), len(model.joints)
    )
    return model


def load_model_file(path: str | Path) -> RobotModel:
    """Load a robot config from a path, or a bundled config by name (`asterix`, `telemax`)."""
    p = Path(path)
    if not p.exists() and (DATA_DIR / f"{path}.yaml").exists():
        p = DATA_DIR / f"{path}.yaml"
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"Cannot read robot config {path}: {e}") from e
    return load_model(text)


def bundled_models() -> list[str]:
    return sorted(p.stem for p in DATA_DIR.glob("*.yaml"))
