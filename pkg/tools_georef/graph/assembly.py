"""
Assembly of the pose graph from scans, odometry, IMU and GNSS inputs.

Frames: the spline lives in the odometry frame; absolute measurements are
given in a local projected frame (projected coordinates minus an origin).
"""

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from tools_georef.common.exceptions import (
    AnchorInitializationError,
    PreintegrationError,
)
from tools_georef.common.formats import GnssSeries, ImuSeries
from tools_georef.common.lie import pose_inverse
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import EdgeNoise, ImuNoise
from tools_georef.common.types import FloatArray, GnssMode, Pose, Stamp
from tools_georef.trajectory.imu import preintegrate, slice_imu
from tools_georef.trajectory.spline import AnchorState, SplineTrajectory

from .anchor import initialize_anchor
from .edges import (
    GraphEdge,
    absolute_pose_edge,
    absolute_position_edge,
    bias_prior_edge,
    bias_walk_edge,
    imu_edge,
    odometry_edge,
)
from .optimizer import PoseGraph

logger = setup_logger(__name__)


@dataclass(frozen=True)
class OdometryTrack:
    """
    Odometry pose of every scan and the keyframe stamps of the local maps.

    ``segment_of`` gives the bias segment (local map index) of a stamp.
    """

    stamps: FloatArray
    poses: tuple[Pose, ...]
    keyframes: FloatArray

    def segment_of(self, stamp: Stamp) -> int:
        return max(int(np.searchsorted(self.keyframes, stamp, side="right")) - 1, 0)

    def keyframe_before(self, stamp: Stamp) -> Optional[int]:
        """Index into ``stamps`` of the latest keyframe strictly before ``stamp``."""
        earlier = self.keyframes[self.keyframes < stamp]
        if earlier.size == 0:
            return None
        return int(np.searchsorted(self.stamps, earlier[-1]))

    @property
    def n_segments(self) -> int:
        return max(int(self.keyframes.size), 1)


def _diag(position: float, rotation_deg: float) -> FloatArray:
    return np.diag([position**2] * 3 + [math.radians(rotation_deg) ** 2] * 3)


def odometry_edges(
    track: OdometryTrack, spline: SplineTrajectory, noise: EdgeNoise
) -> list[GraphEdge]:
    """Every scan (keyframes included) to the previous keyframe."""
    covariance = _diag(noise.odometry_position, noise.odometry_rotation_deg)
    edges: list[GraphEdge] = []
    for index, stamp in enumerate(track.stamps):
        key = track.keyframe_before(float(stamp))
        if key is None:
            continue
        t_key = float(track.stamps[key])
        if not (spline.covers(t_key) and spline.covers(stamp)):
            continue
        relative = pose_inverse(track.poses[key]) @ track.poses[index]
        edges.append(
            odometry_edge(
                t_key, float(stamp), relative, covariance, noise.huber_odometry
            )
        )
    return edges


def imu_edges(
    track: OdometryTrack,
    imu: ImuSeries,
    anchor: AnchorState,
    imu_noise: ImuNoise,
    edge_noise: EdgeNoise,
) -> list[GraphEdge]:
    """Preintegrated IMU between consecutive scans plus bias random walk and prior."""
    edges: list[GraphEdge] = []
    for start, end in zip(track.stamps[:-1], track.stamps[1:]):
        segment = track.segment_of(float(start))
        try:
            batch = slice_imu(imu, float(start), float(end))
        except PreintegrationError:
            logger.warning("No IMU between %.3f and %.3f, interval skipped", start, end)
            continue
        delta = preintegrate(batch, anchor.bias(segment), imu_noise)
        edges.append(imu_edge(delta, segment, edge_noise.huber_imu))

    for segment in range(anchor.n_segments - 1):
        interval = max(
            float(track.keyframes[segment + 1] - track.keyframes[segment]), 1e-3
        )
        walk = np.diag(
            [imu_noise.gyro_walk**2 * interval] * 3
            + [imu_noise.accel_walk**2 * interval] * 3
        )
        edges.append(bias_walk_edge(segment, walk + 1e-12 * np.eye(6)))
    prior = np.diag(
        [edge_noise.bias_prior_gyro**2] * 3 + [edge_noise.bias_prior_accel**2] * 3
    )
    edges.append(bias_prior_edge(0, prior))
    return edges


def absolute_edges(
    refined: Mapping[Stamp, Pose],
    gnss: Optional[GnssSeries],
    keyframes: FloatArray,
    spline: SplineTrajectory,
    mode: GnssMode,
    noise: EdgeNoise,
) -> list[GraphEdge]:
    """
    Full-pose edges for refined keyframe poses and position edges for raw
    GNSS at the keyframe stamps (receiver sigma, or the default when the
    receiver reports none).
    """
    edges: list[GraphEdge] = []
    if mode in (GnssMode.REFINED, GnssMode.BOTH):
        covariance = _diag(noise.refined_position, noise.refined_rotation_deg)
        for stamp, pose in sorted(refined.items()):
            if spline.covers(stamp):
                edges.append(
                    absolute_pose_edge(stamp, pose, covariance, noise.huber_absolute)
                )
    if mode in (GnssMode.RAW, GnssMode.BOTH) and gnss is not None and len(gnss):
        for stamp in keyframes:
            if not spline.covers(float(stamp)):
                continue
            position, sigma = gnss.at(float(stamp))
            sigma = np.where(sigma > 0, sigma, noise.raw_gnss_position)
            edges.append(
                absolute_position_edge(
                    float(stamp), position, np.diag(sigma**2), noise.huber_absolute
                )
            )
    return edges


def initial_anchor_pose(
    edges: Sequence[GraphEdge], spline: SplineTrajectory
) -> Pose:
    """Anchor aligned to the absolute edges, identity when they cannot fix the yaw."""
    stamps: list[float] = []
    positions: list[FloatArray] = []
    for edge in edges:
        if edge.measurement is None or not edge.stamps or len(edge.stamps) != 1:
            continue
        measurement = np.asarray(edge.measurement)
        stamps.append(edge.stamps[0])
        positions.append(
            measurement[:3, 3] if measurement.shape == (4, 4) else measurement
        )
    if len(stamps) < 2:
        logger.warning("Fewer than two absolute constraints, anchor starts at identity")
        return np.eye(4)
    try:
        return initialize_anchor(np.array(stamps), np.array(positions), spline)
    except AnchorInitializationError:
        return np.eye(4)


def build_pose_graph(
    spline: SplineTrajectory,
    track: OdometryTrack,
    refined: Mapping[Stamp, Pose],
    gnss: Optional[GnssSeries] = None,
    imu: Optional[ImuSeries] = None,
    mode: GnssMode = GnssMode.REFINED,
    edge_noise: Optional[EdgeNoise] = None,
    imu_noise: Optional[ImuNoise] = None,
) -> PoseGraph:
    """
    Graph with odometry, absolute, IMU and bias edges; the anchor is initialized
    from the absolute edges preferring refined poses. Loop closures are added
    by the caller.
    """
    edge_noise = edge_noise or EdgeNoise()
    imu_noise = imu_noise or ImuNoise()
    edges = odometry_edges(track, spline, edge_noise)
    absolute = absolute_edges(
        refined, gnss, track.keyframes, spline, mode, edge_noise
    )
    preferred = [
        e
        for e in absolute
        if e.measurement is not None and np.ndim(e.measurement) == 2
    ]
    anchor = AnchorState.zero(
        initial_anchor_pose(preferred or absolute, spline), track.n_segments
    )
    edges += absolute
    if imu is not None:
        edges += imu_edges(track, imu, anchor, imu_noise, edge_noise)
    gravity = np.asarray(imu_noise.gravity, dtype=np.float64)
    graph = PoseGraph(spline, anchor, edges, gravity=gravity)
    logger.info("Pose graph assembled: %s", graph.edge_counts())
    return graph
