"""
Odometry sources for scan accumulation: an external TUM trajectory or a
simple scan-to-map registration over a sliding window of recent scans.
"""

from collections import deque
from typing import ClassVar, Collection, Optional

import numpy as np

from tools_georef.common.abc.odometry import AbstractOdometrySource
from tools_georef.common.formats import PoseSeries
from tools_georef.common.lie import pose_inverse, transform_points
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import RegistrationParams
from tools_georef.common.types import (
    MODEL_CLASSES,
    FloatArray,
    OdometryMode,
    Pose,
    SemanticClass,
)
from tools_georef.registration.register import register
from tools_georef.registration.surfels import DEFAULT_LEVELS, build_surfel_map

from .cloud import LabeledPointCloud, filter_scan

logger = setup_logger(__name__)


class TumOdometry(AbstractOdometrySource):
    """Poses interpolated from an external trajectory at every scan stamp."""

    mode: ClassVar[OdometryMode] = OdometryMode.TUM

    def __init__(self, trajectory: PoseSeries) -> None:
        self.trajectory = trajectory

    def estimate(self, scan: LabeledPointCloud) -> Optional[Pose]:
        if not self.trajectory.covers(scan.stamp):
            return None
        return self.trajectory.interpolate(scan.stamp)


class ScanToMapOdometry(AbstractOdometrySource):
    """
    Registers each scan against the merged surfel map of the last ``window``
    scans, starting from a constant-velocity prediction. A failed registration
    falls back to the prediction.
    """

    mode: ClassVar[OdometryMode] = OdometryMode.INTERNAL

    def __init__(
        self,
        initial_pose: Optional[Pose] = None,
        params: Optional[RegistrationParams] = None,
        levels: tuple[float, ...] = DEFAULT_LEVELS,
        min_points: int = 6,
        window: int = 5,
        keep_classes: Collection[SemanticClass] = MODEL_CLASSES,
    ) -> None:
        self.initial_pose = (
            np.eye(4) if initial_pose is None else np.asarray(initial_pose)
        )
        self.params = params or RegistrationParams()
        self.levels = levels
        self.min_points = min_points
        self.keep_classes = keep_classes
        self._window: deque[FloatArray] = deque(maxlen=window)
        self._poses: deque[Pose] = deque(maxlen=2)

    def _predict(self) -> Pose:
        if len(self._poses) < 2:
            return self._poses[-1].copy()
        previous, last = self._poses
        return last @ (pose_inverse(previous) @ last)

    def estimate(self, scan: LabeledPointCloud) -> Optional[Pose]:
        points = filter_scan(scan, self.keep_classes).points
        if points.shape[0] == 0:
            return None
        if not self._poses:
            pose = self.initial_pose.copy()
        else:
            predicted = self._predict()
            target = build_surfel_map(
                np.concatenate(self._window), self.levels, self.min_points
            )
            source = build_surfel_map(points, self.levels, self.min_points)
            result = register(source, target, predicted, self.params)
            if result.converged:
                pose = result.pose
            else:
                logger.warning(
                    "Scan-to-map odometry failed at %.3f (%d matches), "
                    "using prediction",
                    scan.stamp,
                    result.matched_surfel_count,
                )
                pose = predicted
        self._poses.append(pose)
        self._window.append(transform_points(pose, points))
        return pose
