"""
Initial pose of a local map from GNSS, attitude sensors and the height map.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from tools_georef.common.exceptions import OutOfModelError
from tools_georef.common.lie import make_pose
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import Matrix3, Pose, Vector3
from tools_georef.model.builder import GeoModel

logger = setup_logger(__name__)


@dataclass(frozen=True)
class InitialPoseSource:
    """
    Coarse pose priors of one local map.

    Attributes:
        gnss_position (Vector3): Easting, northing, altitude in the projected frame
        gnss_sigma (Vector3): Per-axis standard deviation (m)
        roll (float): Accelerometer roll (rad)
        pitch (float): Accelerometer pitch (rad)
        yaw (Optional[float]): Magnetometer yaw (rad), ``None`` triggers yaw search
        ultrasonic_height (Optional[float]): Height above the surface below (m)
    """

    gnss_position: Vector3
    gnss_sigma: Vector3 = field(default_factory=lambda: np.full(3, 3.0))
    roll: float = 0.0
    pitch: float = 0.0
    yaw: Optional[float] = None
    ultrasonic_height: Optional[float] = None

    @property
    def needs_yaw_search(self) -> bool:
        return self.yaw is None


def roll_pitch_from_accel(accel: Vector3) -> tuple[float, float]:
    """Roll and pitch of a static IMU from its specific-force measurement."""
    fx, fy, fz = (float(v) for v in accel)
    return math.atan2(fy, fz), math.atan2(-fx, math.hypot(fy, fz))


def attitude_matrix(roll: float, pitch: float, yaw: float) -> Matrix3:
    """``Rz(yaw) Ry(pitch) Rx(roll)``."""
    return np.asarray(Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix())


def initial_pose(
    source: InitialPoseSource, model: GeoModel, altitude_trusted: bool = False
) -> Pose:
    """
    Body-to-model pose prior.

    The horizontal position is the GNSS fix. The height is the GNSS altitude
    when trusted, otherwise the height map value under the fix plus the
    ultrasonic height (falling back to the GNSS altitude when either is
    missing). The height map holds the top surface, so over a building the
    reference is the roof, which is also what the ultrasonic sensor ranges to.
    The result is expressed in the model frame (frame origin subtracted).

    Raises:
        OutOfModelError: If the fix lies outside the height map
    """
    position = model.to_local(np.asarray(source.gnss_position, dtype=np.float64))
    hmap = model.height_map
    if not hmap.contains(position[:2]):
        raise OutOfModelError(
            f"GNSS position ({source.gnss_position[0]:.2f}, "
            f"{source.gnss_position[1]:.2f}) is outside the model",
            details={"position": list(map(float, source.gnss_position))},
        )

    if not altitude_trusted:
        ground = hmap.height_at(position[:2])
        if source.ultrasonic_height is not None and np.isfinite(ground):
            position[2] = float(ground) + source.ultrasonic_height
        else:
            logger.warning(
                "No ground height or ultrasonic reading at (%.2f, %.2f), "
                "using GNSS altitude",
                source.gnss_position[0],
                source.gnss_position[1],
            )

    yaw = 0.0 if source.yaw is None else source.yaw
    return make_pose(attitude_matrix(source.roll, source.pitch, yaw), position)
