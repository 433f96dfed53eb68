from __future__ import annotations

import asyncio
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from app.errors import ParseError, PosePredictionError, ScenarioError
from app.map_cache import load_map, save_map
from app.models import JointConfig, PredictionResult, QueryPose, SettlingParams
from app.robot_model import RobotModel, load_model_file
from app.sdf_map import EsdfMap, build_from_heightmap, build_from_scene
from app.settings import settings
from app.settling import predict_pose
from app.terrain import ARENAS, Bounds, load_heightmap, load_scene

logger = logging.getLogger(__name__)

MAP_SUFFIXES = {".esdf", ".bin"}
SCENE_SUFFIXES = {".yaml", ".yml"}
HEIGHTMAP_SUFFIXES = {".txt", ".hm"}


def load_joints(path: str | Path | None) -> JointConfig:
    """YAML mapping of joint name to angle (rad); None gives the reference configuration."""
    if path is None:
        return JointConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if "positions" not in data:
            data = {"positions": data}
        return JointConfig.model_validate(data)
    except (OSError, yaml.YAMLError, ValidationError, TypeError) as e:
        raise ParseError(f"Invalid joint file {path}: {e}") from e


def result_record(result: PredictionResult) -> dict[str, Any]:
    """Flat, JSON-friendly view of a prediction."""
    x, y, z = (float(v) for v in result.translation)
    qw, qx, qy, qz = (float(v) for v in result.quaternion)
    yaw, pitch, roll = result.yaw_pitch_roll
    return {
        "status": result.status,
        "x": x,
        "y": y,
        "z": z,
        "qw": qw,
        "qx": qx,
        "qy": qy,
        "qz": qz,
        "roll": roll,
        "pitch": pitch,
        "yaw": yaw,
        "contacts": result.contacts.count if result.contacts is not None else 0,
        "beta_min": result.stability.beta_min if result.stability is not None else None,
        "fall_iters": result.fall_iters,
        "rotation_stages": result.rotation_stages,
        "total_rot_iters": result.total_rot_iters,
        "time_us": result.elapsed_us,
        "message": result.message,
    }


class PredictionService:
    def __init__(self):
        # Built maps by (terrain, voxel size, bounds), least recently used first
        self.maps: OrderedDict[tuple, EsdfMap] = OrderedDict()

    def load_terrain_map(
        self,
        terrain: str | Path,
        voxel_size: float | None = None,
        bounds: Bounds | None = None,
    ) -> EsdfMap:
        """ESDF for a cached map file, a scene, a heightmap or a bundled arena name."""
        key = (str(terrain), voxel_size, bounds)
        if key in self.maps:
            self.maps.move_to_end(key)
            return self.maps[key]
        path = Path(terrain)
        suffix = path.suffix.lower()
        if suffix in MAP_SUFFIXES:
            esdf = load_map(path)
        elif suffix in SCENE_SUFFIXES:
            esdf = build_from_scene(load_scene(path), bounds=bounds, voxel_size=voxel_size)
        elif suffix in HEIGHTMAP_SUFFIXES:
            esdf = build_from_heightmap(load_heightmap(path), bounds=bounds, voxel_size=voxel_size)
        elif str(terrain) in ARENAS:
            scene = ARENAS[str(terrain)]()
            esdf = build_from_scene(scene, bounds=bounds, voxel_size=voxel_size)
        else:
            raise ScenarioError(f"Unknown terrain {terrain!r}")
        self.maps[key] = esdf
        while len(self.maps) > settings.max_cached_maps:
            evicted, _ = self.maps.popitem(last=False)
            logger.debug("Dropped cached map %s", evicted[0])
        return esdf

    def load_robot(self, robot: str | Path) -> RobotModel:
        return load_model_file(robot)

    async def build_map(
        self, terrain: str | Path, out: str | Path, voxel_size: float | None = None
    ) -> dict[str, Any]:
        try:
            esdf = await asyncio.to_thread(self.load_terrain_map, terrain, voxel_size)
            save_map(esdf, out)
        except PosePredictionError as e:
            return {"success": False, "message": f"❌ {e}"}
        logger.info("Saved map %s -> %s", terrain, out)
        return {
            "success": True,
            "message": f"✅ {out}: dims={esdf.dims}, voxel={esdf.voxel_size} m",
            "dims": esdf.dims,
        }

    async def predict(
        self,
        terrain: str | Path,
        robot: str | Path,
        query: QueryPose,
        joints: JointConfig | None = None,
        params: SettlingParams | None = None,
    ) -> dict[str, Any]:
        try:
            esdf = self.load_terrain_map(terrain)
            model = self.load_robot(robot)
            result = await asyncio.to_thread(
                predict_pose, esdf, model, joints or JointConfig(), query, params
            )
        except PosePredictionError as e:
            return {"success": False, "message": f"❌ {type(e).__name__}: {e}"}
        return {
            "success": result.converged,
            "message": result.status,
            "result": result_record(result),
        }


prediction_service = PredictionService()
