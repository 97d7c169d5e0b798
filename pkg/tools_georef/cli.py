"""
Command-line frontend: ``georef <command> [options]``.

Commands chain into the full pipeline::

    simulate -> build-model -> refine -> optimize -> evaluate

Every command loads the layered settings (defaults < TOML config < ``GEOREF_``
environment < flags), echoes them into the header of each file it writes and
exits with status 1 on any module error.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from tools_georef.common.abc.odometry import AbstractOdometrySource
from tools_georef.common.config import Settings, load_settings
from tools_georef.common.exceptions import FormatError, GeorefError
from tools_georef.common.formats import (
    AttitudeSeries,
    GnssSeries,
    ImuSeries,
    PoseSeries,
    format_float,
    read_attitude_csv,
    read_gnss_csv,
    read_imu_csv,
    read_tum,
    write_tum,
)
from tools_georef.common.logger_ import set_console_level, setup_logger
from tools_georef.common.types import GnssMode, OdometryMode, Pose
from tools_georef.geodata import (
    IngestSummary,
    merge_dem_grids,
    merge_meshes,
    parse_citygml_subset,
    parse_dem_xyz,
)
from tools_georef.graph import (
    OdometryTrack,
    build_pose_graph,
    dump_graph,
    export_merged_cloud,
    optimize,
    propose_loop_closures,
    write_report,
)
from tools_georef.model import assemble_model, load_model, save_model
from tools_georef.refine import (
    InitialPoseSource,
    RefinementRecord,
    read_refinements,
    refine_local_map,
    roll_pitch_from_accel,
    write_refinement_report,
)
from tools_georef.scans import (
    LocalMap,
    ScanToMapOdometry,
    TumOdometry,
    accumulate,
    load_scan_directory,
)
from tools_georef.sim import load_simulation_config, simulate
from tools_georef.trajectory import fit_initial_spline, to_tum

logger = setup_logger(__name__)
console = Console(stderr=True)

_DEFAULT_YAW_STEPS = 12
_MATCH_TOLERANCE = 1e-6


def _require_file(path: Path) -> Path:
    if not path.exists():
        raise FormatError(f"input not found: {path}")
    return path


def _table(title: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    table = Table(title=title)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*(str(v) for v in row))
    console.print(table)


def cmd_build_model(args: argparse.Namespace, settings: Settings) -> int:
    summary = IngestSummary()
    meshes = [
        parse_citygml_subset(_require_file(path).read_bytes(), summary)
        for path in args.citygml
    ]
    grids = [parse_dem_xyz(_require_file(path).read_bytes()) for path in args.dem]
    model = assemble_model(
        merge_meshes(meshes), merge_dem_grids(grids), settings.model_params
    )
    save_model(model, args.out)
    _table(
        "Geospatial model",
        ("points", "surfels", "height cells", "rings read", "rings skipped", "origin"),
        [
            (
                model.points.shape[0],
                model.surfels.n_surfels,
                model.height_map.cells.size,
                summary.rings_read,
                summary.skipped_rings,
                f"{model.frame_origin[0]:.1f}, {model.frame_origin[1]:.1f}",
            )
        ],
    )
    return 0


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    config = load_simulation_config(_require_file(args.scene))
    paths = simulate(config, args.out, settings.provenance_header())
    _table(
        "Simulated streams",
        ("stream", "path"),
        sorted((k, str(v)) for k, v in paths.items()),
    )
    return 0


def _odometry_source(
    mode: OdometryMode, odometry_file: Optional[Path], settings: Settings
) -> AbstractOdometrySource:
    if mode is OdometryMode.TUM:
        if odometry_file is None:
            raise FormatError("--odometry tum requires --odometry-file")
        return TumOdometry(read_tum(_require_file(odometry_file)))
    return ScanToMapOdometry(
        params=settings.registration_params,
        levels=settings.SURFEL_LEVELS,
        min_points=settings.SURFEL_MIN_POINTS,
        keep_classes=settings.accumulation_params.keep_classes,
    )


def _local_maps(
    scan_dir: Path, source: AbstractOdometrySource, settings: Settings
) -> tuple[list[LocalMap], list[float], list[Pose]]:
    """Local maps plus the odometry stamp and pose of every tracked scan."""
    scans = load_scan_directory(_require_file(scan_dir))
    tracked = list(source.track(scans))
    maps = list(accumulate(tracked, settings.accumulation_params))
    if not maps:
        raise FormatError(f"no local map could be built from {scan_dir}")
    return maps, [scan.stamp for scan, _ in tracked], [pose for _, pose in tracked]


def _pose_prior(
    stamp: float,
    gnss: GnssSeries,
    attitude: Optional[AttitudeSeries],
    imu: Optional[ImuSeries],
) -> InitialPoseSource:
    position, sigma = gnss.at(stamp)
    if attitude is not None and len(attitude):
        k = attitude.nearest(stamp)
        ultrasonic = float(attitude.ultrasonic[k])
        yaw = float(attitude.yaw[k])
        return InitialPoseSource(
            gnss_position=position,
            gnss_sigma=sigma,
            roll=float(attitude.roll[k]),
            pitch=float(attitude.pitch[k]),
            yaw=yaw if math.isfinite(yaw) else None,
            ultrasonic_height=ultrasonic if math.isfinite(ultrasonic) else None,
        )
    if imu is not None and len(imu):
        window = np.abs(imu.stamps - stamp) <= 0.05
        accel = imu.accel[window].mean(axis=0) if window.any() else imu.accel[0]
        roll, pitch = roll_pitch_from_accel(accel)
        return InitialPoseSource(
            gnss_position=position, gnss_sigma=sigma, roll=roll, pitch=pitch
        )
    return InitialPoseSource(gnss_position=position, gnss_sigma=sigma)


def cmd_refine(args: argparse.Namespace, settings: Settings) -> int:
    model = load_model(_require_file(args.model))
    gnss = read_gnss_csv(_require_file(args.gnss))
    attitude = (
        read_attitude_csv(_require_file(args.attitude)) if args.attitude else None
    )
    imu = read_imu_csv(_require_file(args.imu)) if args.imu else None
    source = _odometry_source(OdometryMode(args.odometry), args.odometry_file, settings)
    maps, _, _ = _local_maps(args.scans, source, settings)

    search = settings.search_params
    records: list[RefinementRecord] = []
    for local_map in maps:
        prior = _pose_prior(local_map.reference_stamp, gnss, attitude, imu)
        map_search = search
        if prior.needs_yaw_search and search.yaw_steps == 0:
            map_search = search.model_copy(update={"yaw_steps": _DEFAULT_YAW_STEPS})
        result = refine_local_map(
            local_map,
            prior,
            model,
            map_search,
            settings.plausibility_params,
            settings.registration_params,
            altitude_trusted=settings.ALTITUDE_TRUSTED,
        )
        records.append(RefinementRecord.from_result(result, model.frame_origin))

    write_refinement_report(args.out, records, settings.provenance_header())
    accepted = sum(record.accepted for record in records)
    logger.info("Refined %d of %d local maps", accepted, len(records))
    _table(
        "Refinements",
        ("map", "stamp", "accepted", "s_W", "kappa", "reason"),
        [
            (
                r.map_id,
                f"{r.stamp:.3f}",
                "yes" if r.accepted else "no",
                f"{r.s_W:.3f}",
                f"{max(r.kappa_fwd, r.kappa_bwd):.1f}",
                r.reason.value or "-",
            )
            for r in records
        ],
    )
    return 0


def _frame_origin(
    records: Sequence[RefinementRecord], gnss: Optional[GnssSeries]
) -> np.ndarray:
    """Whole-meter easting/northing subtracted from all absolute inputs."""
    for record in records:
        pose = record.refined_pose
        if pose is not None:
            return np.array([*np.floor(pose[:2, 3]), 0.0])
    if gnss is not None and len(gnss):
        return np.array([*np.floor(gnss.positions[0, :2]), 0.0])
    return np.zeros(3)


def cmd_optimize(args: argparse.Namespace, settings: Settings) -> int:
    records = read_refinements(_require_file(args.refinements))
    gnss = read_gnss_csv(_require_file(args.gnss)) if args.gnss else None
    imu = read_imu_csv(_require_file(args.imu)) if args.imu else None
    mode = OdometryMode.TUM if args.odometry_file else OdometryMode.INTERNAL
    source = _odometry_source(mode, args.odometry_file, settings)
    maps, stamps, poses = _local_maps(args.scans, source, settings)

    origin = _frame_origin(records, gnss)
    refined_by_stamp: dict[float, Pose] = {}
    refined_by_map: dict[int, Pose] = {}
    for record in records:
        pose = record.refined_pose
        if pose is None:
            continue
        pose = pose.copy()
        pose[:3, 3] -= origin
        refined_by_stamp[record.stamp] = pose
        for local_map in maps:
            if abs(local_map.reference_stamp - record.stamp) <= _MATCH_TOLERANCE:
                refined_by_map[local_map.id] = pose
    local_gnss = (
        GnssSeries(gnss.stamps, gnss.positions - origin, gnss.sigmas)
        if gnss is not None
        else None
    )

    spline = fit_initial_spline(
        PoseSeries.from_poses(stamps, poses), settings.SPLINE_DT, settings.SPLINE_DEGREE
    )
    track = OdometryTrack(
        np.asarray(stamps), tuple(poses), np.array([m.reference_stamp for m in maps])
    )
    graph = build_pose_graph(
        spline,
        track,
        refined_by_stamp,
        local_gnss,
        imu,
        GnssMode(args.gnss_mode),
        settings.edge_noise,
        settings.imu_noise,
    )
    if not args.no_loops:
        graph.extend(
            propose_loop_closures(
                maps,
                refined_by_map,
                spline,
                settings.loop_closure_params,
                settings.registration_params,
                settings.edge_noise,
            )
        )
    if args.graph_dump:
        dump_graph(args.graph_dump, graph, settings.provenance_header())

    result = optimize(graph, settings.optimizer_options)
    header = settings.provenance_header()
    trajectory = to_tum(result.spline, settings.EXPORT_RATE, result.anchor.pose)
    write_tum(
        args.out,
        PoseSeries(trajectory.stamps, trajectory.positions + origin, trajectory.quats),
        header,
    )
    if args.report:
        write_report(args.report, result.report, header)
    if args.map or args.map_lpc:
        export_merged_cloud(
            maps, result.spline, result.anchor.pose, origin, args.map, args.map_lpc
        )
    report = result.report
    _table(
        "Optimization",
        ("iterations", "termination", "initial cost", "final cost", "edges"),
        [
            (
                report.iterations,
                report.termination,
                f"{report.initial_cost:.6g}",
                f"{report.final_cost:.6g}",
                ", ".join(f"{k}={v}" for k, v in report.edge_counts.items()),
            )
        ],
    )
    return 0


def position_errors(estimate: PoseSeries, truth: PoseSeries) -> np.ndarray:
    """Position error of the estimate at every truth stamp it covers."""
    inside = (truth.stamps >= estimate.stamps[0]) & (
        truth.stamps <= estimate.stamps[-1]
    )
    if not inside.any():
        raise FormatError("estimate and truth do not overlap in time")
    interpolated = estimate.interpolate(truth.stamps[inside])
    return np.linalg.norm(interpolated[:, :3, 3] - truth.positions[inside], axis=1)


def refinement_errors(
    records: Sequence[RefinementRecord], truth: PoseSeries
) -> np.ndarray:
    """Position error of every accepted refinement at its keyframe stamp."""
    accepted = [r for r in records if r.accepted and truth.covers(r.stamp)]
    if not accepted:
        raise FormatError("no accepted refinement inside the truth trajectory")
    stamps = np.array([r.stamp for r in accepted])
    truth_poses = truth.interpolate(stamps).reshape(-1, 4, 4)
    estimate = np.array(
        [r.refined_pose[:3, 3] for r in accepted]  # type: ignore[index]
    )
    return np.linalg.norm(estimate - truth_poses[:, :3, 3], axis=1)


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    truth = read_tum(_require_file(args.truth))
    estimate_path = _require_file(args.estimate)
    if estimate_path.suffix.lower() == ".csv":
        errors = refinement_errors(read_refinements(estimate_path), truth)
    else:
        errors = position_errors(read_tum(estimate_path), truth)

    metrics = {
        "count": str(errors.size),
        "rmse": format_float(float(np.sqrt(np.mean(errors**2)))),
        "mean": format_float(float(errors.mean())),
        "median": format_float(float(np.median(errors))),
        "max": format_float(float(errors.max())),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8", newline="\n") as stream:
        for line in settings.provenance_header():
            stream.write(line + "\n")
        for key, value in metrics.items():
            stream.write(f"{key} = {value}\n")
    _table(
        "Position error",
        ("count", "RMSE (m)", "mean (m)", "max (m)"),
        [
            (
                errors.size,
                f"{float(metrics['rmse']):.3f}",
                f"{errors.mean():.3f}",
                f"{errors.max():.3f}",
            )
        ],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="georef",
        description=(
            "Georeference LiDAR trajectories against building and terrain models."
        ),
    )
    parser.add_argument("--config", type=Path, help="TOML settings file")
    parser.add_argument(
        "--threads", type=int, help="Worker threads for parallel stages"
    )
    parser.add_argument(
        "--log-level", choices=Settings.ALLOWED_LOG_LEVELS, help="Console log level"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build-model", help="Assemble the geospatial model cache")
    build.add_argument("--citygml", type=Path, nargs="+", required=True)
    build.add_argument("--dem", type=Path, nargs="+", required=True)
    build.add_argument("--out", type=Path, required=True)
    build.add_argument("--height-cell", type=float, dest="HEIGHT_CELL")
    build.set_defaults(handler=cmd_build_model)

    sim = sub.add_parser("simulate", help="Generate a synthetic scene and flight")
    sim.add_argument("--scene", type=Path, required=True)
    sim.add_argument("--out", type=Path, required=True)
    sim.set_defaults(handler=cmd_simulate)

    refine = sub.add_parser(
        "refine", help="Refine GNSS poses of local maps against the model"
    )
    refine.add_argument("--model", type=Path, required=True)
    refine.add_argument("--scans", type=Path, required=True)
    refine.add_argument("--gnss", type=Path, required=True)
    refine.add_argument(
        "--odometry",
        choices=[m.value for m in OdometryMode],
        default=OdometryMode.INTERNAL.value,
    )
    refine.add_argument("--odometry-file", type=Path)
    refine.add_argument("--attitude", type=Path)
    refine.add_argument("--imu", type=Path)
    refine.add_argument("--search-radius", type=float, dest="SEARCH_RADIUS")
    refine.add_argument("--search-step", type=float, dest="SEARCH_STEP")
    refine.add_argument("--yaw-steps", type=int, dest="YAW_STEPS")
    refine.add_argument("--out", type=Path, required=True)
    refine.set_defaults(handler=cmd_refine)

    opt = sub.add_parser(
        "optimize", help="Fuse everything into a georeferenced trajectory"
    )
    opt.add_argument("--scans", type=Path, required=True)
    opt.add_argument("--imu", type=Path)
    opt.add_argument("--gnss", type=Path)
    opt.add_argument("--refinements", type=Path, required=True)
    opt.add_argument("--odometry-file", type=Path)
    opt.add_argument(
        "--gnss-mode",
        choices=[m.value for m in GnssMode],
        default=GnssMode.REFINED.value,
    )
    opt.add_argument("--no-loops", action="store_true", help="Skip loop closure search")
    opt.add_argument("--out", type=Path, required=True)
    opt.add_argument("--map", type=Path, help="Merged georeferenced cloud (ASCII xyz)")
    opt.add_argument(
        "--map-lpc", type=Path, help="Merged cloud in the local frame (LPC1)"
    )
    opt.add_argument("--report", type=Path)
    opt.add_argument("--graph-dump", type=Path)
    opt.set_defaults(handler=cmd_optimize)

    evaluate = sub.add_parser("evaluate", help="Position RMSE against a ground truth")
    evaluate.add_argument("--estimate", type=Path, required=True)
    evaluate.add_argument("--truth", type=Path, required=True)
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


_SETTING_FLAGS = ("HEIGHT_CELL", "SEARCH_RADIUS", "SEARCH_STEP", "YAW_STEPS")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {name: getattr(args, name, None) for name in _SETTING_FLAGS}
    overrides.update(THREADS=args.threads, LOG_LEVEL=args.log_level)
    try:
        settings = load_settings(args.config, **overrides)
    except ValidationError as exc:
        console.print(f"[settings] invalid configuration: {exc}", markup=False)
        return 1
    set_console_level(settings.LOG_LEVEL)

    try:
        return int(args.handler(args, settings))
    except GeorefError as exc:
        console.print(str(exc), markup=False)
        return 1


if __name__ == "__main__":
    sys.exit(main())
