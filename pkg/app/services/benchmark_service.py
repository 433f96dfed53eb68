"""Scenario replay: reduce ground-truth poses, predict, compare, write reports."""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import yaml
from pydantic import ValidationError

from app import transforms
from app.errors import GimbalAmbiguityError, NoFeasiblePoseError, PosePredictionError, ScenarioError
from app.models import (
    ErrorReport,
    ErrorRow,
    GroundTruthPose,
    JointConfig,
    OracleParams,
    PredictionResult,
    QueryPose,
    Scenario,
    SettlingParams,
    SummaryStats,
)
from app.oracle import settle_bruteforce
from app.robot_model import DATA_DIR as ROBOT_DIR
from app.sdf_map import build_from_heightmap
from app.services.prediction_service import prediction_service
from app.settings import settings
from app.settling import predict_pose
from app.terrain import random_heightmap

logger = logging.getLogger(__name__)

CSV_FIELDS = list(ErrorRow.model_fields)
ORACLE_FIELDS = [
    "query_index", "status", "oracle_x", "oracle_y", "oracle_z",
    "oracle_qw", "oracle_qx", "oracle_qy", "oracle_qz",
    "delta_pos_m", "delta_rot_rad", "time_us",
]
PLOT_FIELDS = ["query_index", "err_x", "err_y", "err_z", "err_roll", "err_pitch", "err_yaw"]
GIMBAL_LIMIT = math.radians(89.0)


class BenchQuery(NamedTuple):
    pose: QueryPose | None
    joints: JointConfig
    ground_truth: GroundTruthPose | None
    status: str | None = None


def pose_errors(gt: np.ndarray, pred: np.ndarray) -> tuple[float, float]:
    """Euclidean position error (m) and angle of the relative rotation (rad)."""
    pos = float(np.linalg.norm(gt[:3, 3] - pred[:3, 3]))
    return pos, transforms.relative_angle(gt[:3, :3], pred[:3, :3])


def reduce_to_query(gt: np.ndarray, z_hint: float) -> QueryPose:
    """Drop roll, pitch and z of a ground-truth pose; keep x, y and Z-Y-X yaw."""
    yaw, pitch, _ = transforms.euler_zyx(gt[:3, :3])
    if abs(pitch) >= GIMBAL_LIMIT:
        raise GimbalAmbiguityError(f"Pitch {math.degrees(pitch):.2f} deg makes yaw ambiguous")
    return QueryPose(x=float(gt[0, 3]), y=float(gt[1, 3]), yaw=yaw, z_hint=z_hint)


def summarize(values: list[float]) -> SummaryStats | None:
    finite = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if finite.size == 0:
        return None
    return SummaryStats(
        mean=float(finite.mean()),
        stddev=float(finite.std()),
        max=float(finite.max()),
        min=float(finite.min()),
        count=int(finite.size),
    )


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return Scenario.model_validate(data)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ScenarioError(f"Invalid scenario {path}: {e}") from e


def resolve_reference(ref: str, base: Path) -> str:
    """Scenario references are relative to the scenario file; bare names stay as they are."""
    candidate = base / ref
    if candidate.exists():
        return str(candidate)
    if Path(ref).exists() or (ROBOT_DIR / f"{ref}.yaml").exists() or not Path(ref).suffix:
        return ref
    raise ScenarioError(f"Referenced file {ref} not found next to {base}")


def path_queries(scenario: Scenario, z_hint: float, seed: int) -> list[BenchQuery]:
    """Queries every `spacing` metres along the straight path, with seeded jitter."""
    path = scenario.path
    start, end = np.asarray(path.start, float), np.asarray(path.end, float)
    length = float(np.linalg.norm(end - start))
    n = int(math.floor(length / path.spacing + 1e-9)) + 1
    heading = math.atan2(end[1] - start[1], end[0] - start[0]) if length > 0 else 0.0
    normal = np.array([-math.sin(heading), math.cos(heading)])
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        xy = start + (end - start) * (k * path.spacing / length if length > 0 else 0.0)
        xy = xy + normal * rng.uniform(-path.lateral_jitter, path.lateral_jitter)
        yaw = (path.yaw if path.yaw is not None else heading) + rng.uniform(
            -path.yaw_jitter, path.yaw_jitter
        )
        pose = QueryPose(x=float(xy[0]), y=float(xy[1]), yaw=yaw, z_hint=z_hint)
        out.append(BenchQuery(pose, path.joints, None))
    return out


def scenario_queries(scenario: Scenario, z_hint: float, seed: int) -> list[BenchQuery]:
    out = []
    for q in scenario.queries:
        if q.pose is not None:
            out.append(BenchQuery(q.pose, q.joints, q.ground_truth))
            continue
        try:
            pose = reduce_to_query(q.ground_truth.matrix(), z_hint)
            out.append(BenchQuery(pose, q.joints, q.ground_truth))
        except GimbalAmbiguityError as e:
            logger.warning("Query %d skipped: %s", len(out), e)
            out.append(BenchQuery(None, q.joints, q.ground_truth, "GimbalAmbiguity"))
    if scenario.path is not None:
        out.extend(path_queries(scenario, z_hint, seed))
    return out


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def error_row(index: int, query: BenchQuery, result: PredictionResult | None) -> ErrorRow:
    pose = query.pose
    row = ErrorRow(
        query_index=index,
        x=pose.x if pose else math.nan,
        y=pose.y if pose else math.nan,
        yaw=pose.yaw if pose else math.nan,
        z_hint=pose.z_hint if pose else math.nan,
        status=query.status or (result.status if result else "Skipped"),
    )
    if result is None:
        return row
    t, qt = result.translation, result.quaternion
    row.pred_x, row.pred_y, row.pred_z = (float(v) for v in t)
    row.pred_qw, row.pred_qx, row.pred_qy, row.pred_qz = (float(v) for v in qt)
    row.time_us = result.elapsed_us
    if query.ground_truth is not None and result.converged:
        row.pos_err_m, row.rot_err_rad = pose_errors(query.ground_truth.matrix(), result.pose)
    return row


def plot_row(index: int, query: BenchQuery, result: PredictionResult) -> dict[str, float]:
    gt = query.ground_truth.matrix()
    d = result.pose[:3, 3] - gt[:3, 3]
    gy, gp, gr = transforms.euler_zyx(gt[:3, :3])
    py, pp, pr = result.yaw_pitch_roll
    return {
        "query_index": index,
        "err_x": float(d[0]),
        "err_y": float(d[1]),
        "err_z": float(d[2]),
        "err_roll": _wrap(pr - gr),
        "err_pitch": _wrap(pp - gp),
        "err_yaw": _wrap(py - gy),
    }


def build_report(name: str, rows: list[ErrorRow]) -> ErrorReport:
    converged = sum(r.status == "Converged" for r in rows)
    return ErrorReport(
        scenario=name,
        rows=rows,
        position=summarize([r.pos_err_m for r in rows]),
        orientation=summarize([r.rot_err_rad for r in rows]),
        timing=summarize([r.time_us for r in rows if r.status != "GimbalAmbiguity"]),
        converged=converged,
        failed=len(rows) - converged,
    )


def _write_csv(path: Path, fields: list[str], rows: list[dict[str, Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


class BenchmarkService:
    def __init__(self):
        self.predictions = prediction_service

    async def _predict_all(
        self, esdf, model, queries: list[BenchQuery], params: SettlingParams, parallel: int
    ) -> list[PredictionResult | None]:
        sem = asyncio.Semaphore(max(1, parallel))

        async def one(q: BenchQuery) -> PredictionResult | None:
            if q.pose is None:
                return None
            async with sem:
                return await asyncio.to_thread(predict_pose, esdf, model, q.joints, q.pose, params)

        # gather keeps query order whatever the completion order
        return await asyncio.gather(*(one(q) for q in queries))

    async def run_benchmark(
        self,
        scenario_path: str | Path,
        out_dir: str | Path,
        *,
        voxel_size: float | None = None,
        oracle: bool = False,
        parallel: int = 1,
        keep_going: bool = False,
        emit_plotdata: bool = False,
        params: SettlingParams | None = None,
        oracle_params: OracleParams | None = None,
    ) -> dict[str, Any]:
        try:
            scenario_path = Path(scenario_path)
            scenario = load_scenario(scenario_path)
            base = scenario_path.parent
            terrain = resolve_reference(scenario.terrain, base)
            robot = resolve_reference(scenario.robot, base)
            esdf = await asyncio.to_thread(
                self.predictions.load_terrain_map,
                terrain,
                voxel_size or scenario.voxel_size,
                scenario.bounds,
            )
            model = self.predictions.load_robot(robot)
        except PosePredictionError as e:
            return {"success": False, "message": f"❌ {e}", "exit_code": 1}

        seed = settings.seed if settings.seed is not None else scenario.seed
        z_hint = scenario.z_hint
        if z_hint is None:
            z_hint = float(esdf.origin[2] + esdf.upper[2]) / 2
        queries = scenario_queries(scenario, z_hint, seed)
        params = params or SettlingParams()
        logger.info("Scenario %s: %d queries, seed %d", scenario.name, len(queries), seed)

        results = await self._predict_all(esdf, model, queries, params, parallel)
        rows = [error_row(i, q, r) for i, (q, r) in enumerate(zip(queries, results))]
        report = build_report(scenario.name, rows)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "errors.csv", CSV_FIELDS, [r.model_dump() for r in rows])
        summary: dict[str, Any] = {
            "scenario": scenario.name,
            "seed": seed,
            "queries": len(rows),
            "converged": report.converged,
            "failed": report.failed,
            "position": report.position.model_dump() if report.position else None,
            "orientation": report.orientation.model_dump() if report.orientation else None,
            "timing_us": report.timing.model_dump() if report.timing else None,
        }

        if emit_plotdata:
            plot = [
                plot_row(i, q, r)
                for i, (q, r) in enumerate(zip(queries, results))
                if r is not None and r.converged and q.ground_truth is not None
            ]
            _write_csv(out / "plotdata.csv", PLOT_FIELDS, plot)

        if oracle:
            oracle_rows = await self._oracle_rows(
                esdf, model, queries, results, oracle_params or OracleParams(), parallel
            )
            _write_csv(out / "oracle.csv", ORACLE_FIELDS, oracle_rows)
            deltas_p = [r["delta_pos_m"] for r in oracle_rows]
            deltas_r = [r["delta_rot_rad"] for r in oracle_rows]
            summary["oracle"] = {
                "position_delta": _model_or_none(summarize(deltas_p)),
                "orientation_delta": _model_or_none(summarize(deltas_r)),
                "median_position_delta": _nanmedian(deltas_p),
                "median_orientation_delta": _nanmedian(deltas_r),
            }

        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")

        exit_code = 2 if report.failed and not keep_going else 0
        return {
            "success": exit_code == 0,
            "message": f"{report.converged}/{len(rows)} converged",
            "report": report,
            "summary": summary,
            "exit_code": exit_code,
        }

    async def _oracle_rows(self, esdf, model, queries, results, oracle_params, parallel):
        sem = asyncio.Semaphore(max(1, parallel))

        async def one(i: int, q: BenchQuery, r: PredictionResult | None) -> dict[str, Any]:
            row: dict[str, Any] = {k: math.nan for k in ORACLE_FIELDS}
            row["query_index"] = i
            if q.pose is None:
                row["status"] = q.status or "Skipped"
                return row
            try:
                async with sem:
                    o = await asyncio.to_thread(
                        settle_bruteforce, esdf, model, q.joints, q.pose, oracle_params
                    )
            except NoFeasiblePoseError:
                row["status"] = "NoFeasiblePose"
                return row
            row["status"] = o.status
            row["oracle_x"], row["oracle_y"], row["oracle_z"] = (float(v) for v in o.translation)
            (row["oracle_qw"], row["oracle_qx"], row["oracle_qy"], row["oracle_qz"]) = (
                float(v) for v in o.quaternion
            )
            row["time_us"] = o.elapsed_us
            if r is not None and r.converged:
                row["delta_pos_m"], row["delta_rot_rad"] = pose_errors(o.pose, r.pose)
            return row

        return await asyncio.gather(*(one(i, q, r) for i, (q, r) in enumerate(zip(queries, results))))

    async def sweep(
        self,
        out_dir: str | Path,
        *,
        robot: str = "asterix",
        terrains: int = 50,
        queries: int = 20,
        seed: int | None = None,
        voxel_size: float | None = None,
        parallel: int = 1,
        params: SettlingParams | None = None,
        oracle_params: OracleParams | None = None,
    ) -> dict[str, Any]:
        """Predictor against the brute-force oracle on random heightmap terrains."""
        seed = seed if seed is not None else (settings.seed if settings.seed is not None else 0)
        rng = np.random.default_rng(seed)
        model = self.predictions.load_robot(robot)
        params = params or SettlingParams()
        oracle_params = oracle_params or OracleParams()
        logger.info(
            "Sweep: %d terrains x %d queries, oracle step %.2f deg, %d parallel",
            terrains, queries, math.degrees(oracle_params.angle_step), parallel,
        )
        rows: list[dict[str, Any]] = []
        for t in range(terrains):
            grid = random_heightmap(rng)
            esdf = await asyncio.to_thread(build_from_heightmap, grid, None, voxel_size)
            (x0, y0), (x1, y1) = grid.origin, grid.upper
            z_hint = float(esdf.origin[2] + esdf.upper[2]) / 2
            batch = [
                BenchQuery(
                    QueryPose(
                        x=float(rng.uniform(x0 + 0.6, x1 - 0.6)),
                        y=float(rng.uniform(y0 + 0.6, y1 - 0.6)),
                        yaw=float(rng.uniform(-math.pi, math.pi)),
                        z_hint=z_hint,
                    ),
                    JointConfig(),
                    None,
                )
                for _ in range(queries)
            ]
            results = await self._predict_all(esdf, model, batch, params, parallel)
            oracle_rows = await self._oracle_rows(esdf, model, batch, results, oracle_params, parallel)
            for k, (q, r, o) in enumerate(zip(batch, results, oracle_rows)):
                rows.append(
                    {
                        "terrain": t,
                        "query": k,
                        "x": q.pose.x,
                        "y": q.pose.y,
                        "yaw": q.pose.yaw,
                        "status": r.status,
                        "oracle_status": o["status"],
                        "delta_pos_m": o["delta_pos_m"],
                        "delta_rot_rad": o["delta_rot_rad"],
                        "time_us": r.elapsed_us,
                    }
                )
            logger.info("Sweep terrain %d/%d done", t + 1, terrains)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if rows:
            _write_csv(out / "sweep.csv", list(rows[0]), rows)
        converged = sum(r["status"] == "Converged" for r in rows)
        summary = {
            "seed": seed,
            "queries": len(rows),
            "converged_fraction": converged / len(rows) if rows else 0.0,
            "median_position_delta": _nanmedian([r["delta_pos_m"] for r in rows]),
            "median_orientation_delta": _nanmedian([r["delta_rot_rad"] for r in rows]),
        }
        (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        return {"success": True, "message": f"{converged}/{len(rows)} converged", "summary": summary}


def _nanmedian(values: list[float]) -> float | None:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.median(finite)) if finite else None


def _model_or_none(stats: SummaryStats | None) -> dict[str, Any] | None:
    return stats.model_dump() if stats is not None else None


benchmark_service = BenchmarkService()
