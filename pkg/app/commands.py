from __future__ import annotations

import argparse
import json
import math
from typing import Any, Awaitable, Callable

from rich.console import Console
from rich.table import Table

from app.errors import ParseError
from app.models import OracleParams, QueryPose, SettlingParams
from app.services.benchmark_service import benchmark_service
from app.services.prediction_service import load_joints, prediction_service
from app.settings import settings

console = Console()

Handler = Callable[[argparse.Namespace], Awaitable[int]]


def _parse_pose(text: str) -> QueryPose:
    try:
        x, y, yaw, z = (float(v) for v in text.replace(",", " ").split())
    except ValueError as e:
        raise ParseError(f'--pose expects "x y yaw z", got {text!r}') from e
    return QueryPose(x=x, y=y, yaw=yaw, z_hint=z)


def _settling_params(args: argparse.Namespace) -> SettlingParams:
    values: dict[str, Any] = {"contact_model": args.contact_model}
    if args.epsilon is not None:
        values["epsilon"] = args.epsilon
    return SettlingParams(**values)


def _oracle_params(args: argparse.Namespace) -> OracleParams:
    values: dict[str, Any] = {"workers": max(1, args.parallel)}
    if args.angle_step_deg is not None:
        values["angle_step"] = math.radians(args.angle_step_deg)
    if args.angle_range_deg is not None:
        half = math.radians(args.angle_range_deg)
        values["roll_range"] = (-half, half)
        values["pitch_range"] = (-half, half)
    return OracleParams(**values)


def _stats_table(title: str, summary: dict[str, Any]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("metric")
    for col in ("mean", "stddev", "max", "min", "count"):
        table.add_column(col, justify="right")
    for label, key, scale, unit in (
        ("position", "position", 100.0, "cm"),
        ("orientation", "orientation", math.degrees(1.0), "deg"),
        ("time", "timing_us", 1.0, "us"),
    ):
        stats = summary.get(key)
        if not stats:
            continue
        table.add_row(
            f"{label} [{unit}]",
            *(f"{stats[c] * scale:.3f}" for c in ("mean", "stddev", "max", "min")),
            str(stats["count"]),
        )
    return table


async def _run(args: argparse.Namespace) -> int:
    res = await benchmark_service.run_benchmark(
        args.scenario,
        args.out,
        voxel_size=args.voxel_size,
        oracle=args.oracle,
        parallel=args.parallel,
        keep_going=args.keep_going,
        emit_plotdata=args.emit_plotdata,
        params=_settling_params(args),
        oracle_params=_oracle_params(args) if args.oracle else None,
    )
    if "summary" not in res:
        console.print(res["message"])
        return res["exit_code"]
    summary = res["summary"]
    console.print(_stats_table(f"{summary['scenario']}: {res['message']}", summary))
    if "oracle" in summary:
        o = summary["oracle"]
        if o["median_position_delta"] is not None:
            console.print(
                f"oracle median delta: {o['median_position_delta'] * 100:.2f} cm, "
                f"{math.degrees(o['median_orientation_delta']):.2f} deg"
            )
    return res["exit_code"]


async def _build_map(args: argparse.Namespace) -> int:
    res = await prediction_service.build_map(args.terrain, args.out, args.voxel_size)
    console.print(res["message"])
    return 0 if res["success"] else 1


async def _predict(args: argparse.Namespace) -> int:
    query = _parse_pose(args.pose)
    joints = load_joints(args.joints)
    res = await prediction_service.predict(
        args.map, args.robot, query, joints, _settling_params(args)
    )
    if "result" not in res:
        console.print(res["message"])
        return 1
    # One JSON line on stdout, kept free of rich markup
    print(json.dumps(res["result"]))
    return 0 if res["success"] else 2


async def _sweep(args: argparse.Namespace) -> int:
    res = await benchmark_service.sweep(
        args.out,
        robot=args.robot,
        terrains=args.terrains,
        queries=args.queries,
        seed=args.seed,
        voxel_size=args.voxel_size,
        parallel=args.parallel,
        params=_settling_params(args),
        oracle_params=_oracle_params(args),
    )
    s = res["summary"]
    table = Table(title=f"Oracle sweep: {res['message']}", header_style="bold cyan")
    table.add_column("converged")
    table.add_column("median position delta [cm]", justify="right")
    table.add_column("median orientation delta [deg]", justify="right")
    pos, rot = s["median_position_delta"], s["median_orientation_delta"]
    table.add_row(
        f"{s['converged_fraction'] * 100:.1f}%",
        "-" if pos is None else f"{pos * 100:.2f}",
        "-" if rot is None else f"{math.degrees(rot):.2f}",
    )
    console.print(table)
    return 0


def _add_settling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=None, help="contact threshold (m)")
    p.add_argument(
        "--contact-model",
        choices=("vertical", "gradient"),
        default="vertical",
        help="how predicted contacts are displaced in the rotation stage",
    )


def _add_oracle_flags(p: argparse.ArgumentParser, step: float | None, rng: float | None) -> None:
    p.add_argument("--angle-step-deg", type=float, default=step, help="oracle roll/pitch grid step")
    p.add_argument("--angle-range-deg", type=float, default=rng, help="oracle roll/pitch half range")


def register_commands(parser: argparse.ArgumentParser) -> dict[str, Handler]:
    """Attach the bench subcommands to `parser` and return their handlers by name."""
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a scenario and report pose errors")
    run.add_argument("--scenario", required=True)
    run.add_argument("--voxel-size", type=float, default=None)
    run.add_argument("--oracle", action="store_true", help="also run the brute-force oracle")
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--keep-going", action="store_true", help="exit 0 even if queries fail")
    run.add_argument("--emit-plotdata", action="store_true")
    run.add_argument("--out", required=True)
    _add_settling_flags(run)
    _add_oracle_flags(run, None, None)

    build = sub.add_parser("build-map", help="build an ESDF and write the map cache file")
    build.add_argument("--terrain", required=True, help="scene .yaml, heightmap .txt or arena name")
    build.add_argument("--voxel-size", type=float, default=None)
    build.add_argument("--out", required=True)

    predict = sub.add_parser("predict", help="predict a single pose")
    predict.add_argument("--map", required=True, help="map cache, scene, heightmap or arena name")
    predict.add_argument("--robot", required=True, help="robot config or bundled name")
    predict.add_argument("--pose", required=True, help='"x y yaw z"')
    predict.add_argument("--joints", default=None, help="YAML joint angles (rad)")
    _add_settling_flags(predict)

    sweep = sub.add_parser("sweep", help="predictor vs oracle on random heightmaps")
    sweep.add_argument("--robot", default="asterix")
    sweep.add_argument("--terrains", type=int, default=50)
    sweep.add_argument("--queries", type=int, default=20)
    sweep.add_argument("--seed", type=int, default=settings.seed)
    sweep.add_argument("--voxel-size", type=float, default=None)
    sweep.add_argument("--parallel", type=int, default=1)
    sweep.add_argument("--out", required=True)
    _add_settling_flags(sweep)
    _add_oracle_flags(sweep, 1.0, 20.0)

    return {"run": _run, "build-map": _build_map, "predict": _predict, "sweep": _sweep}
