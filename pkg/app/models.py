import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.settings import settings
from app import transforms

PredictionStatus = Literal["Converged", "NoConvergence", "OutOfMap", "Degenerate"]
ContactModel = Literal["vertical", "gradient"]


class QueryPose(BaseModel):
    x: float = Field(..., description="World x of the CoM frame (m)")
    y: float = Field(..., description="World y of the CoM frame (m)")
    yaw: float = Field(0.0, description="Heading about world z (rad)")
    z_hint: float = Field(..., description="Coarse height of the CoM frame (m)")

    @field_validator("x", "y", "yaw", "z_hint")
    @classmethod
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("Query pose values must be finite")
        return v

    def initial_transform(self) -> np.ndarray:
        """SE(2) pose lifted to SE(3) with zero roll and pitch."""
        return transforms.make_transform(
            transforms.rot_z(self.yaw), (self.x, self.y, self.z_hint)
        )


class JointConfig(BaseModel):
    # Joints left out stay at their reference angle (0 rad)
    positions: dict[str, float] = Field(default_factory=dict, description="joint -> rad")

    def get(self, name: str) -> float:
        return self.positions.get(name, 0.0)


class SettlingParams(BaseModel):
    epsilon: float = Field(
        default_factory=lambda: settings.epsilon, gt=0, description="contact threshold (m)"
    )
    step_decay: float = Field(
        default_factory=lambda: settings.step_decay, gt=0, lt=1, description="h_f"
    )
    max_fall_iters: int = Field(default_factory=lambda: settings.max_fall_iters, ge=1)
    max_rot_iters_per_axis: int = Field(
        default_factory=lambda: settings.max_rot_iters_per_axis, ge=1
    )
    max_rotation_stages: int = Field(
        default_factory=lambda: settings.max_rotation_stages, ge=1
    )
    axis_membership_tol: float = Field(
        default_factory=lambda: settings.axis_membership_tol, gt=0, description="delta_axis (m)"
    )
    contact_merge_radius: float = Field(
        default_factory=lambda: settings.contact_merge_radius, ge=0
    )
    # Slack on the non-penetration constraint (m)
    numerical_slack: float = Field(1e-6, ge=0)
    contact_model: ContactModel = Field(
        "vertical", description="How the predicted contact c_hat is displaced"
    )


class OracleParams(BaseModel):
    z_range: tuple[float, float] | None = Field(
        None, description="CoM-frame z interval (m); None uses the map's z extent"
    )
    roll_range: tuple[float, float] = Field(
        default_factory=lambda: (
            -math.radians(settings.oracle_angle_range_deg),
            math.radians(settings.oracle_angle_range_deg),
        )
    )
    pitch_range: tuple[float, float] = Field(
        default_factory=lambda: (
            -math.radians(settings.oracle_angle_range_deg),
            math.radians(settings.oracle_angle_range_deg),
        )
    )
    z_step: float = Field(default_factory=lambda: settings.oracle_z_step, gt=0)
    angle_step: float = Field(
        default_factory=lambda: math.radians(settings.oracle_angle_step_deg), gt=0
    )
    penetration_tol: float = Field(
        default_factory=lambda: settings.oracle_penetration_tol, ge=0
    )
    epsilon: float = Field(default_factory=lambda: settings.epsilon, gt=0)
    workers: int = Field(1, ge=1, description="thread pool size for orientation batches")

    @model_validator(mode="after")
    def validate_ranges(self):
        for name in ("roll_range", "pitch_range", "z_range"):
            rng = getattr(self, name)
            if rng is not None and not rng[0] <= rng[1]:
                raise ValueError(f"{name} must be a non-empty interval")
        return self


class SdfGradient(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    vector: np.ndarray = Field(..., description="unit direction of increasing distance")
    norm: float = Field(..., description="finite-difference norm before normalizing")


class ContactState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    contacts: np.ndarray = Field(..., description="(N_c, 3) contact points in W (m)")
    # Candidate index of each contact plus the candidates merged into it
    candidate_indices: list[int] = Field(default_factory=list)
    members: list[list[int]] = Field(default_factory=list)

    @property
    def count(self) -> int:
        return int(self.contacts.shape[0])


class SupportPolygon(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    vertices: np.ndarray = Field(..., description="(M, 3) CCW in world XY")
    indices: list[int] = Field(..., description="contact index of each vertex")

    @property
    def axes(self) -> np.ndarray:
        """a_i = c_i - c_{i+1}, cyclic."""
        return self.vertices - np.roll(self.vertices, -1, axis=0)


class StabilityResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    margins: np.ndarray
    beta_min: float
    argmin: int

    @property
    def stable(self) -> bool:
        return self.beta_min > 0.0


class PredictionResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)
    pose: np.ndarray = Field(..., description="T_W_C, 4x4")
    status: PredictionStatus
    contacts: ContactState | None = None
    stability: StabilityResult | None = None
    polygon: SupportPolygon | None = None
    fall_iters: int = 0
    rotation_stages: int = 0
    total_rot_iters: int = 0
    elapsed_us: float = 0.0
    # Candidate distances at the final pose
    distances: np.ndarray | None = None
    message: str | None = None

    @property
    def converged(self) -> bool:
        return self.status == "Converged"

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def quaternion(self) -> np.ndarray:
        return transforms.quaternion_wxyz(self.pose[:3, :3])

    @property
    def yaw_pitch_roll(self) -> tuple[float, float, float]:
        return transforms.euler_zyx(self.pose[:3, :3])


# ----- Benchmark -----
class GroundTruthPose(BaseModel):
    translation: tuple[float, float, float]
    quaternion: tuple[float, float, float, float] = Field(
        (1.0, 0.0, 0.0, 0.0), description="w, x, y, z"
    )

    def matrix(self) -> np.ndarray:
        return transforms.make_transform(
            transforms.from_quaternion_wxyz(self.quaternion), self.translation
        )


class ScenarioQuery(BaseModel):
    pose: QueryPose | None = None
    joints: JointConfig = Field(default_factory=JointConfig)
    ground_truth: GroundTruthPose | None = None

    @model_validator(mode="after")
    def validate_pose_source(self):
        if self.pose is None and self.ground_truth is None:
            raise ValueError("A query needs a pose or a ground truth to reduce")
        return self


class PathSpec(BaseModel):
    """Straight synthetic path sampled every `spacing` metres."""

    start: tuple[float, float]
    end: tuple[float, float]
    yaw: float | None = Field(None, description="None follows the path direction")
    spacing: float = Field(default_factory=lambda: settings.path_spacing, gt=0)
    yaw_jitter: float = Field(0.0, ge=0, description="uniform +- rad, seeded")
    lateral_jitter: float = Field(0.0, ge=0, description="uniform +- m, seeded")
    joints: JointConfig = Field(default_factory=JointConfig)


class Scenario(BaseModel):
    name: str
    terrain: str = Field(..., description="scene .yaml or heightmap .txt, relative to the scenario")
    robot: str = Field(..., description="robot config, relative path or bundled name")
    voxel_size: float = Field(default_factory=lambda: settings.voxel_size, gt=0)
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    seed: int = 0
    z_hint: float | None = Field(None, description="None uses the map's z midpoint")
    queries: list[ScenarioQuery] = Field(default_factory=list)
    path: PathSpec | None = None

    @model_validator(mode="after")
    def validate_queries(self):
        if not self.queries and self.path is None:
            raise ValueError("Scenario needs at least one query or a path")
        return self


class ErrorRow(BaseModel):
    query_index: int
    x: float
    y: float
    yaw: float
    z_hint: float
    status: str
    pred_x: float = math.nan
    pred_y: float = math.nan
    pred_z: float = math.nan
    pred_qw: float = math.nan
    pred_qx: float = math.nan
    pred_qy: float = math.nan
    pred_qz: float = math.nan
    pos_err_m: float = math.nan
    rot_err_rad: float = math.nan
    time_us: float = 0.0


class SummaryStats(BaseModel):
    mean: float
    stddev: float
    max: float
    min: float
    count: int


class ErrorReport(BaseModel):
    scenario: str
    rows: list[ErrorRow]
    position: SummaryStats | None = None
    orientation: SummaryStats | None = None
    timing: SummaryStats | None = None
    converged: int = 0
    failed: int = 0
