"""Analytic terrain primitives, scene files, heightmaps and arena analogs.

Every primitive returns the exact signed distance of its own shape (negative
inside). A scene combines primitives by pointwise minimum: exact outside all
shapes, a valid lower bound on penetration depth inside overlaps.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.errors import InvalidGridError, InvalidSceneError

logger = logging.getLogger(__name__)

Vec3 = tuple[float, float, float]
Bounds = tuple[Vec3, Vec3]

RAMP_HEIGHT = 0.17
RAMP_INCLINE_DEG = 16.0
BAR_SIZE = 0.10
STEP_HEIGHTS = (0.15, 0.265)
ELEVATED_MAX_HEIGHT = 0.35


class PlanePrimitive(BaseModel):
    kind: Literal["plane"] = "plane"
    point: Vec3 = (0.0, 0.0, 0.0)
    normal: Vec3 = (0.0, 0.0, 1.0)

    @field_validator("normal")
    @classmethod
    def validate_normal(cls, v):
        n = np.asarray(v, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm == 0.0:
            raise ValueError("Plane normal must be non-zero")
        return tuple(float(c) for c in n / norm)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return (points - np.asarray(self.point)) @ np.asarray(self.normal)


class SpherePrimitive(BaseModel):
    kind: Literal["sphere"] = "sphere"
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(..., gt=0)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - np.asarray(self.center), axis=1) - self.radius


class BoxPrimitive(BaseModel):
    kind: Literal["box"] = "box"
    center: Vec3
    size: Vec3

    @field_validator("size")
    @classmethod
    def validate_size(cls, v):
        if min(v) <= 0:
            raise ValueError("Box size must be positive")
        return v

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        q = np.abs(points - np.asarray(self.center)) - 0.5 * np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside


def polygon_sdf(points_2d: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Exact signed distance to a simple polygon (negative inside)."""
    p = points_2d
    d = np.sum((p - vertices[0]) ** 2, axis=1)
    s = np.ones(len(p))
    n = len(vertices)
    for i in range(n):
        vi, vj = vertices[i], vertices[i - 1]
        e = vj - vi
        w = p - vi
        t = np.clip((w @ e) / (e @ e), 0.0, 1.0)
        b = w - t[:, None] * e
        d = np.minimum(d, np.sum(b * b, axis=1))
        # Crossing-number parity
        c1 = p[:, 1] >= vi[1]
        c2 = p[:, 1] < vj[1]
        c3 = e[0] * w[:, 1] > e[1] * w[:, 0]
        flip = (c1 & c2 & c3) | (~c1 & ~c2 & ~c3)
        s = np.where(flip, -s, s)
    return s * np.sqrt(d)


class PrismPrimitive(BaseModel):
    """Polygon in the vertical (u, z) plane extruded along the other horizontal axis.

    With `axis="x"` the profile's u coordinate is world x and the extrusion
    spans `extent` in world y; `axis="y"` swaps the two. Ramps, double ramps
    and slanted-top boxes are all prisms.
    """

    kind: Literal["prism"] = "prism"
    axis: Literal["x", "y"] = "x"
    profile: list[tuple[float, float]] = Field(..., min_length=3)
    extent: tuple[float, float]

    @field_validator("extent")
    @classmethod
    def validate_extent(cls, v):
        if not v[0] < v[1]:
            raise ValueError("Prism extent must be increasing")
        return v

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        u_col, w_col = (0, 1) if self.axis == "x" else (1, 0)
        uv = np.stack([points[:, u_col], points[:, 2]], axis=1)
        d2 = polygon_sdf(uv, np.asarray(self.profile, dtype=float))
        mid = 0.5 * (self.extent[0] + self.extent[1])
        half = 0.5 * (self.extent[1] - self.extent[0])
        dw = np.abs(points[:, w_col] - mid) - half
        outside = np.hypot(np.maximum(d2, 0.0), np.maximum(dw, 0.0))
        inside = np.minimum(np.maximum(d2, dw), 0.0)
        return outside + inside


class ColumnsPrimitive(BaseModel):
    """Union of axis-aligned height columns standing on `base_z`."""

    kind: Literal["columns"] = "columns"
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = Field(..., gt=0)
    heights: list[list[float]] = Field(..., min_length=1)
    base_z: float = 0.0

    def boxes(self) -> list[BoxPrimitive]:
        out = []
        for i, row in enumerate(self.heights):
            for j, h in enumerate(row):
                if h <= self.base_z:
                    continue
                out.append(
                    BoxPrimitive(
                        center=(
                            self.origin[0] + (i + 0.5) * self.cell_size,
                            self.origin[1] + (j + 0.5) * self.cell_size,
                            0.5 * (h + self.base_z),
                        ),
                        size=(self.cell_size, self.cell_size, h - self.base_z),
                    )
                )
        return out

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        out = np.full(len(points), np.inf)
        for box in self.boxes():
            np.minimum(out, box.signed_distance(points), out=out)
        return out


SdfPrimitive = Annotated[
    Union[PlanePrimitive, SpherePrimitive, BoxPrimitive, PrismPrimitive, ColumnsPrimitive],
    Field(discriminator="kind"),
]


class TerrainScene(BaseModel):
    name: str = "scene"
    primitives: list[SdfPrimitive] = Field(default_factory=list)
    bounds: Bounds | None = Field(None, description="(min corner, max corner) in m")
    voxel_size: float | None = Field(None, gt=0)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        if not self.primitives:
            raise InvalidSceneError("Scene has no primitives")
        out = self.primitives[0].signed_distance(points)
        for prim in self.primitives[1:]:
            out = np.minimum(out, prim.signed_distance(points))
        return out


def load_scene(path: str | Path) -> TerrainScene:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return TerrainScene.model_validate(data)
    except (yaml.YAMLError, ValidationError, OSError) as e:
        raise InvalidSceneError(f"Invalid scene file {path}: {e}") from e


def save_scene(scene: TerrainScene, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(scene.model_dump(mode="json"), sort_keys=False), encoding="utf-8"
    )


# ----- Heightmaps -----
class HeightGrid(BaseModel):
    """Height samples `heights[i, j]` at (origin_x + i*cell, origin_y + j*cell)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)
    heights: np.ndarray
    cell_size: float = Field(..., gt=0)
    origin: tuple[float, float] = (0.0, 0.0)

    @field_validator("heights", mode="before")
    @classmethod
    def validate_heights(cls, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 2 or min(v.shape) < 2:
            raise ValueError("Height grid must be a 2D array of at least 2x2 samples")
        return v

    @property
    def upper(self) -> tuple[float, float]:
        nx, ny = self.heights.shape
        return (
            self.origin[0] + (nx - 1) * self.cell_size,
            self.origin[1] + (ny - 1) * self.cell_size,
        )

    def triangles(self) -> np.ndarray:
        """(T, 3, 3) triangles; each cell is split along its (i, j)-(i+1, j+1) diagonal."""
        h = self.heights
        nx, ny = h.shape
        xs = self.origin[0] + np.arange(nx) * self.cell_size
        ys = self.origin[1] + np.arange(ny) * self.cell_size
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        V = np.stack([X, Y, h], axis=-1)
        v00, v10 = V[:-1, :-1], V[1:, :-1]
        v01, v11 = V[:-1, 1:], V[1:, 1:]
        lower = np.stack([v00, v10, v11], axis=-2).reshape(-1, 3, 3)
        upper = np.stack([v00, v11, v01], axis=-2).reshape(-1, 3, 3)
        return np.concatenate([lower, upper], axis=0)

    def surface_height(self, xy: np.ndarray) -> np.ndarray:
        """Height of the triangulated surface; xy outside the footprint is clamped."""
        h = self.heights
        nx, ny = h.shape
        u = np.clip((xy[:, 0] - self.origin[0]) / self.cell_size, 0.0, nx - 1)
        v = np.clip((xy[:, 1] - self.origin[1]) / self.cell_size, 0.0, ny - 1)
        i = np.minimum(np.floor(u).astype(int), nx - 2)
        j = np.minimum(np.floor(v).astype(int), ny - 2)
        s, t = u - i, v - j
        h00, h10 = h[i, j], h[i + 1, j]
        h01, h11 = h[i, j + 1], h[i + 1, j + 1]
        lower = h00 + s * (h10 - h00) + t * (h11 - h10)
        upper = h00 + t * (h01 - h00) + s * (h11 - h01)
        return np.where(s >= t, lower, upper)


def load_heightmap(path: str | Path) -> HeightGrid:
    """Plain-text heightmap: `# cell_size=<m> origin=<x>,<y>` then one row per x index."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise InvalidGridError(f"{path}: missing header line")
    header: dict[str, str] = {}
    for token in lines[0].lstrip("#").split():
        key, _, value = token.partition("=")
        header[key.strip()] = value.strip()
    if "cell_size" not in header:
        raise InvalidGridError(f"{path}: header lacks cell_size")
    try:
        cell_size = float(header["cell_size"])
        origin = tuple(float(c) for c in header.get("origin", "0,0").split(","))
        rows = [[float(v) for v in line.split()] for line in lines[1:] if line.strip()]
        heights = np.asarray(rows, dtype=float)
        return HeightGrid(heights=heights, cell_size=cell_size, origin=origin)
    except (ValueError, ValidationError) as e:
        raise InvalidGridError(f"{path}: {e}") from e


def save_heightmap(grid: HeightGrid, path: str | Path) -> None:
    lines = [f"# cell_size={grid.cell_size!r} origin={grid.origin[0]!r},{grid.origin[1]!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in grid.heights]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def random_heightmap(
    rng: np.random.Generator,
    *,
    size: tuple[float, float] = (2.4, 1.6),
    cell_size: float = 0.1,
    origin: tuple[float, float] = (-1.2, -0.8),
    max_slope_deg: float = 25.0,
    max_step: float = STEP_HEIGHTS[1],
    n_waves: int = 3,
    n_steps: int = 1,
) -> HeightGrid:
    """Smooth random relief with bounded slope plus a few rectangular steps."""
    nx = int(round(size[0] / cell_size)) + 1
    ny = int(round(size[1] / cell_size)) + 1
    xs = origin[0] + np.arange(nx) * cell_size
    ys = origin[1] + np.arange(ny) * cell_size
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    h = np.zeros((nx, ny))
    for _ in range(n_waves):
        kx, ky = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        h += rng.uniform(0.02, 0.08) * np.sin(kx * X + ky * Y + phase)
    gx, gy = np.gradient(h, cell_size)
    steepest = float(np.max(np.hypot(gx, gy)))
    limit = math.tan(math.radians(max_slope_deg))
    if steepest > limit:
        h *= limit / steepest
    for _ in range(n_steps):
        x0 = rng.uniform(xs[0], xs[-1])
        y0 = rng.uniform(ys[0], ys[-1])
        w, d = rng.uniform(0.3, 0.8, size=2)
        mask = (X >= x0) & (X <= x0 + w) & (Y >= y0) & (Y <= y0 + d)
        h[mask] += rng.uniform(0.0, max_step)
    return HeightGrid(heights=h, cell_size=cell_size, origin=origin)


# ----- Arena analogs -----
def flat_ground(
    size: tuple[float, float] = (4.0, 3.0), z_max: float = 1.2, name: str = "flat"
) -> TerrainScene:
    hx, hy = size[0] / 2, size[1] / 2
    return TerrainScene(
        name=name,
        primitives=[PlanePrimitive()],
        bounds=((-hx, -hy, -0.3), (hx, hy, z_max)),
    )


def inclined_plane(incline_deg: float = RAMP_INCLINE_DEG, **kwargs) -> TerrainScene:
    """Infinite ramp rising along +x."""
    a = math.radians(incline_deg)
    scene = flat_ground(name=f"ramp_{incline_deg:g}deg", **kwargs)
    scene.primitives = [PlanePrimitive(normal=(-math.sin(a), 0.0, math.cos(a)))]
    return scene


def continuous_ramps(count: int = 3, width: float = 2.4) -> TerrainScene:
    """Back-to-back double ramps, 17 cm high at a 16 deg incline, ridges along y."""
    run = RAMP_HEIGHT / math.tan(math.radians(RAMP_INCLINE_DEG))
    start = -count * run
    prims: list = [PlanePrimitive()]
    for k in range(count):
        u0 = start + 2 * k * run
        prims.append(
            PrismPrimitive(
                axis="x",
                profile=[(u0, -0.05), (u0 + 2 * run, -0.05), (u0 + 2 * run, 0.0),
                         (u0 + run, RAMP_HEIGHT), (u0, 0.0)],
                extent=(-width / 2, width / 2),
            )
        )
    half_x = count * run + 1.2
    return TerrainScene(
        name="continuous_ramps",
        primitives=prims,
        bounds=((-half_x, -width / 2 - 0.3, -0.3), (half_x, width / 2 + 0.3, 1.3)),
    )


def curb(spacing: float = 1.2, width: float = 2.4) -> TerrainScene:
    """Three 10x10 cm bars lying across the driving direction."""
    prims: list = [PlanePrimitive()]
    for k in (-1, 0, 1):
        prims.append(
            BoxPrimitive(
                center=(k * spacing, 0.0, BAR_SIZE / 2),
                size=(BAR_SIZE, width, BAR_SIZE),
            )
        )
    half_x = spacing + 1.2
    return TerrainScene(
        name="curb",
        primitives=prims,
        bounds=((-half_x, -width / 2 - 0.3, -0.3), (half_x, width / 2 + 0.3, 1.3)),
    )


def hurdles(depth: float = 1.0, width: float = 2.4) -> TerrainScene:
    """A 15 cm step platform followed by a 26.5 cm one."""
    prims: list = [PlanePrimitive()]
    for k, h in enumerate(STEP_HEIGHTS):
        x0 = -1.5 + k * 2.0
        prims.append(
            BoxPrimitive(center=(x0 + depth / 2, 0.0, h / 2), size=(depth, width, h))
        )
    return TerrainScene(
        name="hurdles",
        primitives=prims,
        bounds=((-3.0, -width / 2 - 0.3, -0.3), (3.0, width / 2 + 0.3, 1.4)),
    )


def elevated_ramps(cell: float = 0.6, nx: int = 5, ny: int = 3) -> TerrainScene:
    """Grid of boxes up to 35 cm with 16 deg slanted tops, slopes alternating x/y."""
    rise = cell * math.tan(math.radians(RAMP_INCLINE_DEG))
    bases = (0.05, 0.15, 0.10, 0.175, 0.0)
    x_lo, y_lo = -nx * cell / 2, -ny * cell / 2
    prims: list = [PlanePrimitive()]
    for i in range(nx):
        for j in range(ny):
            base = bases[(i + 2 * j) % len(bases)]
            top = min(base + rise, ELEVATED_MAX_HEIGHT)
            x0, y0 = x_lo + i * cell, y_lo + j * cell
            along_x = (i + j) % 2 == 0
            u0 = x0 if along_x else y0
            lo_h, hi_h = (base, top) if (i + j) % 4 < 2 else (top, base)
            extent = (y0, y0 + cell) if along_x else (x0, x0 + cell)
            prims.append(
                PrismPrimitive(
                    axis="x" if along_x else "y",
                    profile=[(u0, -0.05), (u0 + cell, -0.05), (u0 + cell, hi_h), (u0, lo_h)],
                    extent=extent,
                )
            )
    return TerrainScene(
        name="elevated_ramps",
        primitives=prims,
        bounds=((x_lo - 1.2, y_lo - 0.6, -0.3), (-x_lo + 1.2, -y_lo + 0.6, 1.7)),
    )


ARENAS = {
    "flat": flat_ground,
    "continuous_ramps": continuous_ramps,
    "curb": curb,
    "hurdles": hurdles,
    "elevated_ramps": elevated_ramps,
}
