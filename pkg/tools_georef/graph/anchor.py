"""
Closed-form anchor initialization from refined GNSS positions.
"""

import math

import numpy as np

from tools_georef.common.exceptions import AnchorInitializationError
from tools_georef.common.lie import make_pose, rot_z
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, Pose
from tools_georef.trajectory.spline import SplineTrajectory

logger = setup_logger(__name__)


def align_yaw_translation(source: FloatArray, target: FloatArray) -> Pose:
    """
    Least-squares ``target ~= Rz(yaw) source + t`` over 3D correspondences.

    Yaw and the horizontal translation come from the planar alignment of the
    centered points; the vertical translation is the mean height difference.

    Raises:
        AnchorInitializationError: If the horizontal positions are coincident
    """
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if source.shape != target.shape or source.shape[0] < 2:
        raise AnchorInitializationError(
            "anchor alignment needs at least two correspondences"
        )

    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    src = source[:, :2] - source_mean[:2]
    dst = target[:, :2] - target_mean[:2]
    if min(float(np.sum(src**2)), float(np.sum(dst**2))) < 1e-12:
        raise AnchorInitializationError(
            "refined positions are horizontally coincident, yaw is unobservable",
            details={"count": int(source.shape[0])},
        )

    cross = src.T @ dst
    yaw = math.atan2(cross[0, 1] - cross[1, 0], cross[0, 0] + cross[1, 1])
    rot = rot_z(yaw)
    translation = target_mean - rot @ source_mean
    translation[2] = float(np.mean(target[:, 2] - source[:, 2]))
    return make_pose(rot, translation)


def initialize_anchor(
    stamps: FloatArray, refined_positions: FloatArray, spline: SplineTrajectory
) -> Pose:
    """Anchor pose aligning spline positions at ``stamps`` to ``refined_positions``."""
    stamps = np.asarray(stamps, dtype=np.float64).reshape(-1)
    spline_positions = np.array(
        [spline.position(float(t)) for t in stamps]
    ).reshape(-1, 3)
    anchor = align_yaw_translation(spline_positions, refined_positions)
    aligned = spline_positions @ anchor[:3, :3].T + anchor[:3, 3]
    residuals = refined_positions - aligned
    logger.info(
        "Anchor initialized from %d positions: yaw=%.2f deg, rms=%.3f m",
        stamps.size,
        math.degrees(math.atan2(anchor[1, 0], anchor[0, 0])),
        float(np.sqrt(np.mean(np.sum(residuals**2, axis=1)))),
    )
    return anchor
