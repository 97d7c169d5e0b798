"""
Text dump of a pose graph, optimization report and georeferenced cloud export.

Graph grammar, one record per line, ``#`` starts a comment::

    spline <degree> <t0> <dt> <knot count>
    knot <k> <tx> <ty> <tz> <qx> <qy> <qz> <qw>
    anchor <tx> <ty> <tz> <qx> <qy> <qz> <qw>
    bias <segment> <gx> <gy> <gz> <ax> <ay> <az>
    gravity <gx> <gy> <gz>
    edge absolute_pose <t> <huber> <tx> <ty> <tz> <qx> <qy> <qz> <qw> <cov 36>
    edge absolute_position <t> <huber> <x> <y> <z> <cov 9>
    edge odometry|relative <t_0> <t_1> <huber> <label|-> <tx> .. <qw> <cov 36>
    edge imu <t_a> <t_b> <segment> <huber> <dR 9> <dv 3> <dp 3> <cov 81>
             <d_R_bg 9> <d_v_bg 9> <d_v_ba 9> <d_p_bg 9> <d_p_ba 9> <bg 3> <ba 3>
    edge bias_walk <segment> <cov 36>
    edge bias_prior <segment> <cov 36>

Matrices are row-major; floats use the shortest round-trip representation.
"""

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tools_georef.common.exceptions import FormatError
from tools_georef.common.formats import format_float
from tools_georef.common.lie import pose_from_quat, pose_to_quat, transform_points
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import EdgeKind, FloatArray, Pose
from tools_georef.scans.cloud import LabeledPointCloud, write_scan
from tools_georef.scans.pipeline import LocalMap
from tools_georef.trajectory.imu import PreintegratedDelta
from tools_georef.trajectory.spline import AnchorState, SplineTrajectory

from .edges import GraphEdge
from .optimizer import OptimizationReport, PoseGraph

logger = setup_logger(__name__)


def _fmt(values: Iterable[float]) -> str:
    return " ".join(format_float(float(v)) for v in values)


def _pose_fields(pose: Pose) -> str:
    translation, quat = pose_to_quat(np.asarray(pose))
    return _fmt([*translation, *quat])


def _edge_line(edge: GraphEdge) -> str:
    cov = _fmt(edge.covariance.ravel())
    tag = f"edge {edge.kind.value}"
    measurement = edge.measurement
    if isinstance(measurement, PreintegratedDelta):
        values = [
            measurement.delta_R.ravel(),
            measurement.delta_v,
            measurement.delta_p,
            measurement.covariance.ravel(),
            measurement.d_R_bg.ravel(),
            measurement.d_v_bg.ravel(),
            measurement.d_v_ba.ravel(),
            measurement.d_p_bg.ravel(),
            measurement.d_p_ba.ravel(),
            measurement.bias_gyro,
            measurement.bias_accel,
        ]
        return (
            f"{tag} {_fmt(edge.stamps)} {edge.segments[0]} {_fmt([edge.huber_delta])} "
            f"{_fmt(np.concatenate(values))}"
        )
    if measurement is None:
        return f"{tag} {edge.segments[0]} {cov}"
    stamps = _fmt([*edge.stamps, edge.huber_delta])
    match edge.kind:
        case EdgeKind.ABSOLUTE_POSITION:
            return f"{tag} {stamps} {_fmt(measurement)} {cov}"
        case EdgeKind.ODOMETRY | EdgeKind.RELATIVE:
            label = edge.label or "-"
            return f"{tag} {stamps} {label} {_pose_fields(measurement)} {cov}"
        case _:
            return f"{tag} {stamps} {_pose_fields(measurement)} {cov}"


def dump_graph(path: Path, graph: PoseGraph, header: Iterable[str] = ()) -> None:
    spline, anchor = graph.spline, graph.anchor
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as stream:
        for line in header:
            stream.write((line if line.startswith("#") else f"# {line}") + "\n")
        stream.write(
            f"spline {spline.degree} {_fmt([spline.t0, spline.dt])} {spline.n_knots}\n"
        )
        for k in range(spline.n_knots):
            knot = _fmt([*spline.translations[k], *spline.quats[k]])
            stream.write(f"knot {k} {knot}\n")
        stream.write(f"anchor {_pose_fields(anchor.pose)}\n")
        for s in range(anchor.n_segments):
            biases = _fmt([*anchor.gyro_bias[s], *anchor.accel_bias[s]])
            stream.write(f"bias {s} {biases}\n")
        stream.write(f"gravity {_fmt(graph.gravity)}\n")
        for edge in graph.edges:
            stream.write(_edge_line(edge) + "\n")


def _floats(tokens: Sequence[str], count: int, where: str) -> FloatArray:
    if len(tokens) != count:
        raise FormatError(f"{where}: expected {count} values, got {len(tokens)}")
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise FormatError(f"{where}: non-numeric value") from exc


def _pose(values: FloatArray) -> Pose:
    return pose_from_quat(values[3:7], values[:3])


def _parse_edge(tokens: list[str], where: str) -> GraphEdge:
    try:
        kind = EdgeKind(tokens[0])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{where}: unknown edge kind") from exc
    rest = tokens[1:]
    match kind:
        case EdgeKind.ABSOLUTE_POSE:
            v = _floats(rest, 2 + 7 + 36, where)
            return GraphEdge(kind, (v[0],), _pose(v[2:9]), v[9:].reshape(6, 6), v[1])
        case EdgeKind.ABSOLUTE_POSITION:
            v = _floats(rest, 2 + 3 + 9, where)
            return GraphEdge(kind, (v[0],), v[2:5], v[5:].reshape(3, 3), v[1])
        case EdgeKind.ODOMETRY | EdgeKind.RELATIVE:
            if len(rest) < 4:
                raise FormatError(f"{where}: truncated edge")
            v = _floats(rest[:3] + rest[4:], 3 + 7 + 36, where)
            label = "" if rest[3] == "-" else rest[3]
            return GraphEdge(
                kind,
                (v[0], v[1]),
                _pose(v[3:10]),
                v[10:].reshape(6, 6),
                v[2],
                label=label,
            )
        case EdgeKind.IMU:
            if len(rest) < 3:
                raise FormatError(f"{where}: truncated edge")
            segment = int(rest[2])
            v = _floats(rest[:2] + rest[3:], 2 + 1 + 9 + 3 + 3 + 81 + 45 + 6, where)
            stamps, huber_delta, body = v[:2], v[2], v[3:]
            blocks = np.split(body, np.cumsum([9, 3, 3, 81, 9, 9, 9, 9, 9, 3]))
            delta = PreintegratedDelta(
                start=float(stamps[0]),
                end=float(stamps[1]),
                dt_total=float(stamps[1] - stamps[0]),
                delta_R=blocks[0].reshape(3, 3),
                delta_v=blocks[1],
                delta_p=blocks[2],
                covariance=blocks[3].reshape(9, 9),
                d_R_bg=blocks[4].reshape(3, 3),
                d_v_bg=blocks[5].reshape(3, 3),
                d_v_ba=blocks[6].reshape(3, 3),
                d_p_bg=blocks[7].reshape(3, 3),
                d_p_ba=blocks[8].reshape(3, 3),
                bias_gyro=blocks[9],
                bias_accel=blocks[10],
            )
            return GraphEdge(
                kind,
                (delta.start, delta.end),
                delta,
                delta.covariance + 1e-12 * np.eye(9),
                huber_delta,
                segments=(segment,),
            )
        case _:
            if not rest:
                raise FormatError(f"{where}: truncated edge")
            segment = int(rest[0])
            v = _floats(rest[1:], 36, where)
            segments = (
                (segment, segment + 1) if kind is EdgeKind.BIAS_WALK else (segment,)
            )
            return GraphEdge(kind, (), None, v.reshape(6, 6), segments=segments)


def load_graph(path: Path) -> PoseGraph:
    """
    Raises:
        FormatError: Missing file or a record violating the grammar
    """
    if not path.is_file():
        raise FormatError(f"graph file not found: {path}")
    spline_header: tuple[int, float, float, int] | None = None
    knots: dict[int, FloatArray] = {}
    anchor_pose = np.eye(4)
    biases: dict[int, FloatArray] = {}
    gravity = None
    edges: list[GraphEdge] = []
    with path.open("r", encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            where = f"{path}:{line_number}"
            tag, rest = tokens[0], tokens[1:]
            try:
                if tag == "spline":
                    spline_header = (
                        int(rest[0]),
                        float(rest[1]),
                        float(rest[2]),
                        int(rest[3]),
                    )
                elif tag == "knot":
                    knots[int(rest[0])] = _floats(rest[1:], 7, where)
                elif tag == "anchor":
                    anchor_pose = _pose(_floats(rest, 7, where))
                elif tag == "bias":
                    biases[int(rest[0])] = _floats(rest[1:], 6, where)
                elif tag == "gravity":
                    gravity = _floats(rest, 3, where)
                elif tag == "edge":
                    edges.append(_parse_edge(rest, where))
                else:
                    raise FormatError(f"{where}: unknown record {tag!r}")
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{where}: malformed {tag} record") from exc

    if spline_header is None:
        raise FormatError(f"{path}: missing spline record")
    degree, t0, dt, count = spline_header
    if sorted(knots) != list(range(count)):
        raise FormatError(f"{path}: expected knots 0..{count - 1}")
    values = np.array([knots[k] for k in range(count)])
    quats = values[:, 3:7] / np.linalg.norm(values[:, 3:7], axis=1)[:, None]
    spline = SplineTrajectory(degree, t0, dt, values[:, :3], quats)
    bias_rows = (
        np.array([biases[s] for s in sorted(biases)]) if biases else np.zeros((1, 6))
    )
    anchor = AnchorState(anchor_pose, bias_rows[:, :3], bias_rows[:, 3:])
    graph = PoseGraph(spline, anchor, edges)
    if gravity is not None:
        graph.gravity = gravity
    return graph


def write_report(
    path: Path, report: OptimizationReport, header: Iterable[str] = ()
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as stream:
        for line in header:
            stream.write((line if line.startswith("#") else f"# {line}") + "\n")
        for line in report.lines():
            stream.write(line + "\n")


def georeferenced_points(
    maps: Sequence[LocalMap], spline: SplineTrajectory, anchor: Pose
) -> FloatArray:
    """Every scan point moved by ``T_a T_X(t_scan)``, in scan order."""
    chunks = [
        transform_points(anchor @ spline.evaluate(scan.stamp), scan.points)
        for local_map in maps
        for scan in local_map.scans
        if spline.covers(scan.stamp)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def export_merged_cloud(
    maps: Sequence[LocalMap],
    spline: SplineTrajectory,
    anchor: Pose,
    origin: FloatArray,
    xyz_path: Path | None = None,
    lpc_path: Path | None = None,
) -> int:
    """
    Write the georeferenced cloud.

    ``xyz_path`` receives ``x y z`` lines in the projected frame (``origin``
    added back) at full precision; ``lpc_path`` an unlabeled LPC1 cloud in the
    local frame.

    Returns:
        int: Number of exported points
    """
    points = georeferenced_points(maps, spline, anchor)
    if xyz_path is not None:
        xyz_path.parent.mkdir(parents=True, exist_ok=True)
        shifted = points + np.asarray(origin, dtype=np.float64)
        with xyz_path.open("w", encoding="utf-8", newline="\n") as stream:
            for point in shifted:
                stream.write(_fmt(point) + "\n")
    if lpc_path is not None:
        stamp = maps[0].reference_stamp if maps else 0.0
        write_scan(
            LabeledPointCloud(stamp, points, np.zeros(points.shape[0], dtype=np.uint8)),
            lpc_path,
        )
    logger.info("Exported %d georeferenced points", points.shape[0])
    return int(points.shape[0])
