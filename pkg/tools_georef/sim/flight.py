"""
Synthetic flights: ground-truth trajectory through waypoints and every sensor
stream the pipeline consumes (LiDAR scans, IMU, GNSS, attitude, drifting
odometry).

Truth orientation is yaw only, so the odometry frame (the truth frame moved
to the first pose) stays gravity aligned. The IMU coincides with the LiDAR.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.interpolate import CubicSpline

from tools_georef.common.exceptions import SimulationError
from tools_georef.common.formats import (
    AttitudeSeries,
    GnssSeries,
    ImuSeries,
    PoseSeries,
    write_attitude_csv,
    write_gnss_csv,
    write_imu_csv,
    write_tum,
)
from tools_georef.common.lie import make_pose, pose_inverse, rot_z, yaw_of
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, Pose, Stamp, Vector3
from tools_georef.scans.cloud import SCAN_SUFFIX, LabeledPointCloud, write_scan

from .scene import (
    LidarParams,
    SyntheticScene,
    export_scene,
    load_scene_file,
    open_field_scene,
    parse_scene,
    random_scene,
    render_scan,
)

logger = setup_logger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])

# Independent random streams derived from the flight seed
_LIDAR_STREAM, _IMU_STREAM, _GNSS_STREAM, _ATTITUDE_STREAM, _BIAS_STREAM = range(5)


class _RigModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ImuParams(_RigModel):
    rate: float = Field(default=200.0, gt=0, description="Hz")
    gyro_noise: float = Field(default=1.7e-4, ge=0, description="rad/s/sqrt(Hz)")
    accel_noise: float = Field(default=2.0e-3, ge=0, description="m/s^2/sqrt(Hz)")
    gyro_bias: float = Field(
        default=0.0, ge=0, description="Constant bias magnitude (rad/s)"
    )
    accel_bias: float = Field(
        default=0.0, ge=0, description="Constant bias magnitude (m/s^2)"
    )


class GnssParams(_RigModel):
    """
    Receiver model. ``offset_schedule`` entries ``(start stamp, offset)``
    replace ``offset`` from their start on, giving a piecewise-constant bias.
    """

    rate: float = Field(default=5.0, gt=0, description="Hz")
    noise: float = Field(default=0.0, ge=0, description="m")
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    offset_schedule: tuple[tuple[float, tuple[float, float, float]], ...] = ()
    reported_sigma: float = Field(
        default=3.0, gt=0, description="Sigma written to the CSV (m)"
    )

    def offset_at(self, stamps: FloatArray) -> FloatArray:
        offsets = np.tile(np.asarray(self.offset, dtype=np.float64), (len(stamps), 1))
        for start, value in sorted(self.offset_schedule):
            offsets[stamps >= start] = value
        return offsets


class AttitudeParams(_RigModel):
    roll_pitch_noise_deg: float = Field(default=0.5, ge=0)
    yaw_noise_deg: float = Field(default=2.0, ge=0)
    ultrasonic_noise: float = Field(default=0.02, ge=0, description="m")
    ultrasonic_range: float = Field(default=10.0, gt=0, description="m")


class SensorRig(_RigModel):
    lidar: LidarParams = LidarParams()
    imu: ImuParams = ImuParams()
    gnss: GnssParams = GnssParams()
    attitude: AttitudeParams = AttitudeParams()


class FlightPlan(_RigModel):
    """
    Attributes:
        waypoints: Scene-frame positions the trajectory passes through (m)
        duration: Flight time (s)
        scan_rate: LiDAR revolutions per second
        drift_ratio: Odometry scale error, meters of drift per meter flown
        yaw_drift_deg_per_m: Odometry heading drift
        seed: Seed of the sensor noise streams
    """

    waypoints: tuple[tuple[float, float, float], ...]
    duration: float = Field(default=60.0, gt=0)
    scan_rate: float = Field(default=10.0, gt=0)
    drift_ratio: float = Field(default=0.0, ge=0)
    yaw_drift_deg_per_m: float = 0.0
    seed: int = 0


class SimulationConfig(_RigModel):
    scene: SyntheticScene
    rig: SensorRig = SensorRig()
    flight: FlightPlan

    @model_validator(mode="after")
    def validate_waypoints(self) -> "SimulationConfig":
        points = np.asarray(self.flight.waypoints, dtype=np.float64).reshape(-1, 3)
        outside = ~self.scene.contains(points[:, :2])
        if np.any(outside):
            raise ValueError(f"waypoints outside the scene: {points[outside].tolist()}")
        below = points[:, 2] <= self.scene.surface_height(points[:, :2])
        if np.any(below):
            raise ValueError(
                f"waypoints below the scene surface: {points[below].tolist()}"
            )
        return self


@dataclass(frozen=True)
class TruthTrajectory:
    """C2 position and yaw splines of the sensor in the scene frame."""

    position: CubicSpline
    yaw: CubicSpline
    duration: float

    def pose(self, stamp: Stamp) -> Pose:
        return make_pose(
            rot_z(float(self.yaw(stamp))), np.asarray(self.position(stamp))
        )

    def poses(self, stamps: Iterable[Stamp]) -> list[Pose]:
        return [self.pose(float(t)) for t in stamps]

    def imu(self, stamps: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Exact body-frame angular rate and specific force at ``stamps``."""
        yaw = self.yaw(stamps)
        yaw_rate = self.yaw(stamps, 1)
        accel = self.position(stamps, 2) - GRAVITY
        c, s = np.cos(yaw), np.sin(yaw)
        force = np.column_stack(
            [
                c * accel[:, 0] + s * accel[:, 1],
                -s * accel[:, 0] + c * accel[:, 1],
                accel[:, 2],
            ]
        )
        zeros = np.zeros_like(yaw_rate)
        gyro = np.column_stack([zeros, zeros, yaw_rate])
        return gyro, force


def truth_trajectory(
    waypoints: Sequence[Sequence[float]], duration: float
) -> TruthTrajectory:
    """
    Clamped cubic splines through the waypoints, timed proportionally to the
    distance between them; the yaw follows the direction of travel.

    Raises:
        SimulationError: Fewer than two waypoints, repeated consecutive
            waypoints or a non-positive duration
    """
    points = np.asarray(waypoints, dtype=np.float64).reshape(-1, 3)
    if len(points) < 2:
        raise SimulationError(f"a flight needs at least 2 waypoints, got {len(points)}")
    if duration <= 0:
        raise SimulationError(f"flight duration must be positive, got {duration}")
    lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.any(lengths < 1e-6):
        raise SimulationError(
            "consecutive waypoints coincide", details={"waypoints": points.tolist()}
        )
    times = duration * np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum()

    direction = np.diff(points[:, :2], axis=0)
    headings: list[float] = []
    for dx, dy in direction:
        if math.hypot(dx, dy) < 1e-6:
            headings.append(headings[-1] if headings else 0.0)
        else:
            headings.append(math.atan2(dy, dx))
    yaws = np.unwrap(np.array(headings + headings[-1:]))
    return TruthTrajectory(
        position=CubicSpline(times, points, bc_type="clamped"),
        yaw=CubicSpline(times, yaws, bc_type="clamped"),
        duration=float(duration),
    )


@dataclass(frozen=True)
class Flight:
    """
    All streams of one synthetic flight.

    ``truth`` is in the scene frame; ``gnss`` is projected (scene origin
    added); ``odometry`` starts at identity.
    """

    scans: tuple[LabeledPointCloud, ...]
    imu: ImuSeries
    gnss: GnssSeries
    attitude: AttitudeSeries
    truth: PoseSeries
    odometry: PoseSeries
    origin: tuple[float, float]

    def truth_projected(self) -> PoseSeries:
        offset = np.array([self.origin[0], self.origin[1], 0.0])
        return PoseSeries(
            self.truth.stamps, self.truth.positions + offset, self.truth.quats
        )


def _stamps(duration: float, rate: float) -> FloatArray:
    return np.arange(int(math.floor(duration * rate + 1e-9)) + 1) / rate


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def _random_vector(rng: np.random.Generator, magnitude: float) -> Vector3:
    if magnitude == 0:
        return np.zeros(3)
    direction = rng.normal(size=3)
    return magnitude * direction / np.linalg.norm(direction)


def drifting_odometry(
    poses: Sequence[Pose], drift_ratio: float, yaw_drift_deg_per_m: float = 0.0
) -> list[Pose]:
    """
    Chain the true relative motions with a scale error of ``drift_ratio`` and
    a heading error proportional to the distance moved, starting at identity.
    """
    odometry = [np.eye(4)]
    for previous, current in zip(poses[:-1], poses[1:]):
        step = pose_inverse(previous) @ current
        distance = float(np.linalg.norm(step[:3, 3]))
        drifted = step.copy()
        drifted[:3, 3] *= 1.0 + drift_ratio
        yaw_drift = math.radians(yaw_drift_deg_per_m) * distance
        drifted[:3, :3] = rot_z(yaw_drift) @ step[:3, :3]
        odometry.append(odometry[-1] @ drifted)
    return odometry


def generate_flight(
    scene: SyntheticScene,
    waypoints: Sequence[Sequence[float]],
    rig: SensorRig,
    duration: float,
    scan_rate: float = 10.0,
    drift_ratio: float = 0.0,
    yaw_drift_deg_per_m: float = 0.0,
    seed: int = 0,
) -> Flight:
    """
    Simulate a flight through the scene.

    Every noise source draws from its own generator seeded by
    ``(seed, stream, index)``, so streams are reproducible bit for bit and
    independent of each other.

    Args:
        scene (SyntheticScene): World to fly through
        waypoints (Sequence[Sequence[float]]): Scene-frame positions (m)
        rig (SensorRig): Sensor models
        duration (float): Flight time (s)
        scan_rate (float): LiDAR scans per second
        drift_ratio (float): Odometry scale drift per meter
        yaw_drift_deg_per_m (float): Odometry heading drift
        seed (int): Noise seed

    Returns:
        Flight: Scans, IMU, GNSS, attitude, ground truth and odometry

    Raises:
        SimulationError: On degenerate waypoints or a pose below the ground
    """
    truth = truth_trajectory(waypoints, duration)

    scan_stamps = _stamps(duration, scan_rate)
    poses = truth.poses(scan_stamps)
    scans = tuple(
        render_scan(scene, pose, rig.lidar, float(t), _rng(seed, _LIDAR_STREAM, k))
        for k, (t, pose) in enumerate(zip(scan_stamps, poses))
    )
    logger.info("Rendered %d scans over %.1f s", len(scans), duration)

    bias_rng = _rng(seed, _BIAS_STREAM)
    gyro_bias = _random_vector(bias_rng, rig.imu.gyro_bias)
    accel_bias = _random_vector(bias_rng, rig.imu.accel_bias)
    imu_stamps = _stamps(duration, rig.imu.rate)
    gyro, force = truth.imu(imu_stamps)
    imu_rng = _rng(seed, _IMU_STREAM)
    root_rate = math.sqrt(rig.imu.rate)
    gyro_sigma = rig.imu.gyro_noise * root_rate
    accel_sigma = rig.imu.accel_noise * root_rate
    gyro = gyro + gyro_bias + imu_rng.normal(0.0, gyro_sigma, gyro.shape)
    force = force + accel_bias + imu_rng.normal(0.0, accel_sigma, force.shape)
    imu = ImuSeries(imu_stamps, gyro, force)

    origin = np.array([scene.origin[0], scene.origin[1], 0.0])
    gnss_stamps = _stamps(duration, rig.gnss.rate)
    gnss_positions = np.asarray(truth.position(gnss_stamps)) + origin
    gnss_positions += rig.gnss.offset_at(gnss_stamps)
    gnss_positions += _rng(seed, _GNSS_STREAM).normal(
        0.0, rig.gnss.noise, gnss_positions.shape
    )
    gnss = GnssSeries(
        gnss_stamps,
        gnss_positions,
        np.full(gnss_positions.shape, rig.gnss.reported_sigma),
    )

    attitude = _attitude(scene, poses, scan_stamps, rig, _rng(seed, _ATTITUDE_STREAM))
    odometry = drifting_odometry(poses, drift_ratio, yaw_drift_deg_per_m)
    logger.info(
        "Flight streams: %d IMU, %d GNSS samples, odometry drift %.3f m/m",
        len(imu),
        len(gnss),
        drift_ratio,
    )
    return Flight(
        scans=scans,
        imu=imu,
        gnss=gnss,
        attitude=attitude,
        truth=PoseSeries.from_poses(scan_stamps, poses),
        odometry=PoseSeries.from_poses(scan_stamps, odometry),
        origin=scene.origin,
    )


def _attitude(
    scene: SyntheticScene,
    poses: Sequence[Pose],
    stamps: FloatArray,
    rig: SensorRig,
    rng: np.random.Generator,
) -> AttitudeSeries:
    count = len(stamps)
    params = rig.attitude
    tilt = math.radians(params.roll_pitch_noise_deg)
    roll = rng.normal(0.0, tilt, count)
    pitch = rng.normal(0.0, tilt, count)
    yaw = np.array([yaw_of(p[:3, :3]) for p in poses])
    yaw = yaw + rng.normal(0.0, math.radians(params.yaw_noise_deg), count)
    yaw = np.arctan2(np.sin(yaw), np.cos(yaw))
    positions = np.array([p[:3, 3] for p in poses])
    height = positions[:, 2] - scene.surface_height(positions[:, :2])
    height = height + rng.normal(0.0, params.ultrasonic_noise, count)
    ultrasonic = np.where(height <= params.ultrasonic_range, height, np.nan)
    return AttitudeSeries(stamps, roll, pitch, yaw, ultrasonic)


def write_flight(
    flight: Flight,
    scene: SyntheticScene,
    directory: Path,
    header: Iterable[str] = (),
    dem_spacing: float = 1.0,
) -> dict[str, Path]:
    """
    Write the scene export and every stream of ``flight`` into ``directory``.

    Layout: ``scene.gml``, ``dem.xyz``, ``scans/<index>.lpc``, ``imu.csv``,
    ``gnss.csv``, ``attitude.csv``, ``truth.tum`` (projected) and
    ``odometry.tum``.
    """
    header = list(header)
    gml_path, dem_path = export_scene(scene, directory, dem_spacing)
    scan_dir = directory / "scans"
    scan_dir.mkdir(parents=True, exist_ok=True)
    for index, scan in enumerate(flight.scans):
        write_scan(scan, scan_dir / f"{index:06d}{SCAN_SUFFIX}")

    paths = {
        "citygml": gml_path,
        "dem": dem_path,
        "scans": scan_dir,
        "imu": directory / "imu.csv",
        "gnss": directory / "gnss.csv",
        "attitude": directory / "attitude.csv",
        "truth": directory / "truth.tum",
        "odometry": directory / "odometry.tum",
    }
    write_imu_csv(paths["imu"], flight.imu, header)
    write_gnss_csv(paths["gnss"], flight.gnss, header)
    write_attitude_csv(paths["attitude"], flight.attitude, header)
    write_tum(paths["truth"], flight.truth_projected(), header)
    write_tum(paths["odometry"], flight.odometry, header)
    logger.info("Wrote %d scans and sensor streams to %s", len(flight.scans), directory)
    return paths


def simulation_config(data: dict[str, Any]) -> SimulationConfig:
    """
    Validate a simulation config document.

    The ``scene`` table either describes the scene explicitly or holds
    ``random_buildings`` (and optionally ``random_clutter``) to draw one from
    ``rng_seed``; ``open_field = true`` yields an empty scene.

    Raises:
        SimulationError: If the document is invalid
    """
    data = dict(data)
    scene_data = dict(data.pop("scene", {}))
    seed = int(scene_data.get("rng_seed", 0))
    extent = tuple(scene_data.get("extent", (-60.0, -60.0, 60.0, 60.0)))
    if scene_data.pop("open_field", False):
        scene = open_field_scene(seed, extent)  # type: ignore[arg-type]
    elif "random_buildings" in scene_data:
        scene = random_scene(
            seed,
            int(scene_data["random_buildings"]),
            extent,  # type: ignore[arg-type]
            int(scene_data.get("random_clutter", 0)),
        )
    else:
        scene = parse_scene(scene_data)
    try:
        return SimulationConfig.model_validate({**data, "scene": scene})
    except ValidationError as exc:
        raise SimulationError(f"invalid simulation config: {exc}") from exc


def load_simulation_config(path: Path) -> SimulationConfig:
    return simulation_config(load_scene_file(path))


def simulate(
    config: SimulationConfig, directory: Path, header: Iterable[str] = ()
) -> dict[str, Path]:
    """Generate the configured flight and write all of its files."""
    plan = config.flight
    flight = generate_flight(
        config.scene,
        plan.waypoints,
        config.rig,
        plan.duration,
        scan_rate=plan.scan_rate,
        drift_ratio=plan.drift_ratio,
        yaw_drift_deg_per_m=plan.yaw_drift_deg_per_m,
        seed=plan.seed,
    )
    return write_flight(flight, config.scene, directory, header)
