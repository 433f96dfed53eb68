"""Scenario replay, error reports and the files the benchmark writes."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from app import transforms
from app.errors import ExcessiveGridError, GimbalAmbiguityError, ScenarioError
from app.models import OracleParams, PathSpec, Scenario, SettlingParams
from app.services import benchmark_service as benchmark_module
from app.services.benchmark_service import (
    CSV_FIELDS,
    benchmark_service,
    load_scenario,
    path_queries,
    pose_errors,
    reduce_to_query,
    summarize,
)
from app.settings import settings
from app.settling import predict_pose

SCENARIOS = Path(__file__).resolve().parent.parent / "app" / "data" / "scenarios"
FLAT_BOX = SCENARIOS / "flat_box.yaml"


def _write_scenario(tmp_path: Path, **fields) -> Path:
    data = {"name": "tmp", "terrain": "flat", "robot": "box", "voxel_size": 0.05, **fields}
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def _read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_pose_errors():
    a = transforms.make_transform(transforms.rot_z(0.1), (1.0, 2.0, 0.0))
    b = transforms.make_transform(transforms.rot_z(0.4), (4.0, 6.0, 0.0))

    pos, rot = pose_errors(a, b)

    assert pos == pytest.approx(5.0)
    assert rot == pytest.approx(0.3)
    assert pose_errors(a, a) == (0.0, pytest.approx(0.0, abs=1e-7))


def test_reduce_keeps_xy_and_yaw():
    gt = transforms.make_transform(transforms.from_yaw_pitch_roll(0.4, 0.2, -0.1), (1.0, 2.0, 0.3))

    q = reduce_to_query(gt, z_hint=0.7)

    assert (q.x, q.y, q.z_hint) == (1.0, 2.0, 0.7)
    assert q.yaw == pytest.approx(0.4)


def test_reduce_refuses_near_vertical_pitch():
    gt = transforms.make_transform(transforms.from_yaw_pitch_roll(0.0, math.radians(89.5), 0.0))

    with pytest.raises(GimbalAmbiguityError):
        reduce_to_query(gt, z_hint=0.5)


def test_summarize_skips_non_finite():
    stats = summarize([1.0, math.nan, 3.0])

    assert (stats.mean, stats.min, stats.max, stats.count) == (2.0, 1.0, 3.0, 2)
    assert stats.stddev == pytest.approx(1.0)
    assert summarize([math.nan]) is None


def test_path_queries_are_spaced_and_seeded():
    scenario = Scenario(
        name="path",
        terrain="flat",
        robot="box",
        path=PathSpec(start=(0.0, 0.0), end=(1.0, 0.0), spacing=0.05, yaw_jitter=0.1, lateral_jitter=0.02),
    )

    first = path_queries(scenario, z_hint=0.5, seed=3)
    again = path_queries(scenario, z_hint=0.5, seed=3)
    other = path_queries(scenario, z_hint=0.5, seed=4)

    assert len(first) == 21
    assert first[-1].pose.x == pytest.approx(1.0)
    assert all(abs(q.pose.y) <= 0.02 and abs(q.pose.yaw) <= 0.1 for q in first)
    assert [q.pose for q in first] == [q.pose for q in again]
    assert [q.pose for q in first] != [q.pose for q in other]


def test_load_scenario_errors(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")

    path = _write_scenario(tmp_path)  # neither queries nor a path
    with pytest.raises(ScenarioError):
        load_scenario(path)


@pytest.mark.asyncio
async def test_flat_box_scenario_recovers_ground_truth(tmp_path):
    res = await benchmark_service.run_benchmark(FLAT_BOX, tmp_path)

    assert res["exit_code"] == 0
    rows = _read_rows(tmp_path / "errors.csv")
    assert list(rows[0]) == CSV_FIELDS
    assert [r["status"] for r in rows] == ["Converged"] * 3
    for r in rows[:2]:
        assert float(r["pos_err_m"]) < 1e-6
        assert float(r["rot_err_rad"]) < 1e-6
    assert math.isnan(float(rows[2]["pos_err_m"]))


@pytest.mark.asyncio
async def test_summary_matches_the_csv(tmp_path):
    await benchmark_service.run_benchmark(FLAT_BOX, tmp_path)

    rows = _read_rows(tmp_path / "errors.csv")
    summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    pos = [float(r["pos_err_m"]) for r in rows if math.isfinite(float(r["pos_err_m"]))]
    times = [float(r["time_us"]) for r in rows]

    assert summary["queries"] == 3
    assert summary["converged"] == 3 and summary["failed"] == 0
    assert summary["position"]["count"] == 2
    assert summary["position"]["mean"] == pytest.approx(np.mean(pos))
    assert summary["position"]["max"] == pytest.approx(max(pos))
    assert summary["timing_us"]["mean"] == pytest.approx(np.mean(times))


@pytest.mark.asyncio
async def test_reruns_are_identical_except_timing(tmp_path):
    await benchmark_service.run_benchmark(FLAT_BOX, tmp_path / "a")
    await benchmark_service.run_benchmark(FLAT_BOX, tmp_path / "b", parallel=4)

    def strip(rows):
        return [{k: v for k, v in r.items() if k != "time_us"} for r in rows]

    first = _read_rows(tmp_path / "a" / "errors.csv")
    second = _read_rows(tmp_path / "b" / "errors.csv")
    assert strip(first) == strip(second)


@pytest.mark.asyncio
async def test_failed_query_sets_exit_code(tmp_path):
    path = _write_scenario(tmp_path, queries=[{"pose": {"x": 50.0, "y": 0.0, "z_hint": 0.5}}])

    res = await benchmark_service.run_benchmark(path, tmp_path / "out")
    kept = await benchmark_service.run_benchmark(path, tmp_path / "kept", keep_going=True)

    assert res["exit_code"] == 2
    assert res["summary"]["failed"] == 1
    assert _read_rows(tmp_path / "out" / "errors.csv")[0]["status"] == "OutOfMap"
    assert kept["exit_code"] == 0


@pytest.mark.asyncio
async def test_gimbal_row_counts_as_failure(tmp_path):
    half = math.radians(89.5) / 2
    path = _write_scenario(
        tmp_path,
        queries=[
            {"ground_truth": {"translation": [0.0, 0.0, 0.1], "quaternion": [math.cos(half), 0.0, math.sin(half), 0.0]}},
            {"pose": {"x": 0.0, "y": 0.0, "z_hint": 0.5}},
        ],
    )

    res = await benchmark_service.run_benchmark(path, tmp_path / "out")

    rows = _read_rows(tmp_path / "out" / "errors.csv")
    assert [r["status"] for r in rows] == ["GimbalAmbiguity", "Converged"]
    assert res["exit_code"] == 2
    assert res["summary"]["timing_us"]["count"] == 1


@pytest.mark.asyncio
async def test_unknown_terrain_is_a_load_error(tmp_path):
    path = _write_scenario(tmp_path, terrain="nowhere", queries=[{"pose": {"x": 0.0, "y": 0.0, "z_hint": 0.5}}])

    res = await benchmark_service.run_benchmark(path, tmp_path / "out")

    assert res["exit_code"] == 1
    assert not (tmp_path / "out" / "errors.csv").exists()


@pytest.mark.asyncio
async def test_plotdata_has_one_row_per_ground_truth(tmp_path):
    await benchmark_service.run_benchmark(FLAT_BOX, tmp_path, emit_plotdata=True)

    rows = _read_rows(tmp_path / "plotdata.csv")
    assert [r["query_index"] for r in rows] == ["0", "1"]
    assert all(abs(float(r["err_z"])) < 1e-6 for r in rows)


@pytest.mark.asyncio
async def test_oracle_columns(tmp_path):
    params = OracleParams(
        roll_range=(math.radians(-2.0), math.radians(2.0)),
        pitch_range=(math.radians(-2.0), math.radians(2.0)),
        angle_step=math.radians(1.0),
    )

    res = await benchmark_service.run_benchmark(FLAT_BOX, tmp_path, oracle=True, oracle_params=params)

    rows = _read_rows(tmp_path / "oracle.csv")
    assert len(rows) == 3
    assert all(r["status"] == "Converged" for r in rows)
    assert res["summary"]["oracle"]["median_position_delta"] < 1e-6
    assert res["summary"]["oracle"]["median_orientation_delta"] < 1e-6


@pytest.mark.asyncio
async def test_environment_seed_overrides_the_scenario(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "seed", 5)

    res = await benchmark_service.run_benchmark(FLAT_BOX, tmp_path)

    assert res["summary"]["seed"] == 5


class _FakePredictions:
    """Stands in for the prediction service's map and robot loading."""

    def __init__(self, esdf=None, model=None, error=None):
        self.esdf = esdf
        self.model = model
        self.error = error
        self.calls = []

    def load_terrain_map(self, terrain, voxel_size=None, bounds=None):
        self.calls.append((terrain, voxel_size, bounds))
        if self.error is not None:
            raise self.error
        return self.esdf

    def load_robot(self, robot):
        return self.model


@pytest.mark.asyncio
async def test_map_build_failure_is_reported(tmp_path, monkeypatch):
    fake = _FakePredictions(error=ExcessiveGridError("20000001 voxels"))
    monkeypatch.setattr(benchmark_service, "predictions", fake)

    res = await benchmark_service.run_benchmark(FLAT_BOX, tmp_path)

    assert res["exit_code"] == 1
    assert res["message"].startswith("❌")
    assert "20000001" in res["message"]


@pytest.mark.asyncio
async def test_voxel_override_reaches_the_map_build(tmp_path, monkeypatch, flat_map, box_robot):
    fake = _FakePredictions(esdf=flat_map, model=box_robot)
    monkeypatch.setattr(benchmark_service, "predictions", fake)

    res = await benchmark_service.run_benchmark(FLAT_BOX, tmp_path, voxel_size=0.02)
    await benchmark_service.run_benchmark(FLAT_BOX, tmp_path)

    assert res["exit_code"] == 0
    assert [c[:2] for c in fake.calls] == [("flat", 0.02), ("flat", 0.05)]


@pytest.mark.asyncio
async def test_sweep_is_seeded(tmp_path):
    oracle = OracleParams(
        roll_range=(math.radians(-5.0), math.radians(5.0)),
        pitch_range=(math.radians(-5.0), math.radians(5.0)),
        angle_step=math.radians(2.5),
    )
    kwargs = dict(robot="box", terrains=1, queries=2, seed=1, voxel_size=0.1, oracle_params=oracle)

    res = await benchmark_service.sweep(tmp_path / "a", **kwargs)
    await benchmark_service.sweep(tmp_path / "b", **kwargs)

    assert res["success"]
    summary = json.loads((tmp_path / "a" / "sweep_summary.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 1 and summary["queries"] == 2
    assert 0.0 <= summary["converged_fraction"] <= 1.0

    def strip(rows):
        return [{k: v for k, v in r.items() if k != "time_us"} for r in rows]

    first = _read_rows(tmp_path / "a" / "sweep.csv")
    assert len(first) == 2
    assert strip(first) == strip(_read_rows(tmp_path / "b" / "sweep.csv"))


@pytest.mark.asyncio
async def test_continuous_ramps_scenario_converges_everywhere(tmp_path):
    res = await benchmark_service.run_benchmark(SCENARIOS / "continuous_ramps.yaml", tmp_path)

    rows = _read_rows(tmp_path / "errors.csv")
    assert {r["status"] for r in rows} == {"Converged"}
    assert res["exit_code"] == 0


@pytest.mark.asyncio
@pytest.mark.parametrize("name", ["continuous_ramps", "curb", "hurdles", "elevated_ramps"])
async def test_converged_rows_touch_without_penetrating(tmp_path, monkeypatch, name):
    seen = []

    def recording(*args, **kwargs):
        result = predict_pose(*args, **kwargs)
        seen.append(result)
        return result

    monkeypatch.setattr(benchmark_module, "predict_pose", recording)
    params = SettlingParams()

    await benchmark_service.run_benchmark(SCENARIOS / f"{name}.yaml", tmp_path, keep_going=True)

    converged = [r for r in seen if r.converged]
    assert converged
    for r in converged:
        d = r.distances[np.isfinite(r.distances)]
        assert -params.numerical_slack <= d.min() < params.epsilon
        assert r.contacts.count >= 1
        assert r.stability.beta_min > 0


@pytest.mark.perf
@pytest.mark.asyncio
async def test_elevated_ramps_timing(tmp_path):
    res = await benchmark_service.run_benchmark(SCENARIOS / "elevated_ramps.yaml", tmp_path, keep_going=True)

    timing = res["summary"]["timing_us"]
    assert timing["mean"] < 5000
    assert timing["max"] < 20000
