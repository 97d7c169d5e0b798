"""
Motion-gated accumulation of filtered scans into local maps.
"""

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from tools_georef.common.exceptions import ScanPipelineError
from tools_georef.common.lie import pose_inverse, transform_points
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import AccumulationParams
from tools_georef.common.types import FloatArray, LabelArray, Pose, Stamp
from tools_georef.registration.surfels import SurfelMap, build_surfel_map

from .cloud import LabeledPointCloud, filter_scan

logger = setup_logger(__name__)


@dataclass(frozen=True)
class LocalMap:
    """
    Several motion-separated filtered scans expressed in the frame of the
    first one (the keyframe).

    Attributes:
        id (int): Sequence number in emission order
        scans (tuple[LabeledPointCloud, ...]): Filtered scans, sensor frame
        poses (tuple[Pose, ...]): Odometry pose of every scan
        merged_points (FloatArray): All scan points in the keyframe frame
        merged_labels (LabelArray): Labels of ``merged_points``
        surfels (SurfelMap): Surfel map of ``merged_points``
    """

    id: int
    scans: tuple[LabeledPointCloud, ...]
    poses: tuple[Pose, ...]
    merged_points: FloatArray
    merged_labels: LabelArray
    surfels: SurfelMap

    @property
    def reference_stamp(self) -> Stamp:
        return self.scans[0].stamp

    @property
    def keyframe_pose(self) -> Pose:
        return self.poses[0]

    @property
    def stamps(self) -> list[Stamp]:
        return [scan.stamp for scan in self.scans]

    @property
    def relative_poses(self) -> list[Pose]:
        """Pose of every scan in the keyframe frame."""
        inverse = pose_inverse(self.poses[0])
        return [inverse @ pose for pose in self.poses]

    def __len__(self) -> int:
        return len(self.scans)


def build_local_map(
    map_id: int,
    scans: list[LabeledPointCloud],
    poses: list[Pose],
    params: AccumulationParams,
) -> LocalMap:
    if not scans:
        raise ScanPipelineError("a local map needs at least one scan")
    inverse = pose_inverse(poses[0])
    merged = np.concatenate(
        [
            transform_points(inverse @ pose, scan.points)
            for scan, pose in zip(scans, poses)
        ]
    )
    labels = np.concatenate([scan.labels for scan in scans])
    return LocalMap(
        id=map_id,
        scans=tuple(scans),
        poses=tuple(np.array(p, dtype=np.float64) for p in poses),
        merged_points=merged,
        merged_labels=labels,
        surfels=build_surfel_map(
            merged, params.surfel_levels, params.surfel_min_points
        ),
    )


@dataclass
class LocalMapAccumulator:
    """
    Single-writer accumulator.

    A scan is accepted when its filtered cloud is nonempty and its position
    is farther than ``tau_move`` from the last accepted scan (across map
    boundaries). A map is emitted once it holds ``max_scans`` scans; ``finish``
    emits the remainder.
    """

    params: AccumulationParams = field(default_factory=AccumulationParams)
    _scans: list[LabeledPointCloud] = field(default_factory=list, init=False)
    _poses: list[Pose] = field(default_factory=list, init=False)
    _last_position: Optional[FloatArray] = field(default=None, init=False)
    _last_stamp: Optional[Stamp] = field(default=None, init=False)
    _next_id: int = field(default=0, init=False)

    def push(self, scan: LabeledPointCloud, pose: Pose) -> Optional[LocalMap]:
        """
        Offer one scan with its odometry pose.

        Raises:
            ScanPipelineError: If the stamp does not increase
        """
        if self._last_stamp is not None and not scan.stamp > self._last_stamp:
            raise ScanPipelineError(
                f"non-monotonic scan stamp {scan.stamp!r} after {self._last_stamp!r}",
                details={"stamp": scan.stamp},
            )
        self._last_stamp = scan.stamp

        filtered = filter_scan(scan, self.params.keep_classes)
        if len(filtered) == 0:
            logger.debug("Scan %.3f has no model-class points, skipped", scan.stamp)
            return None
        position = np.asarray(pose)[:3, 3]
        if (
            self._last_position is not None
            and np.linalg.norm(position - self._last_position) <= self.params.tau_move
        ):
            return None

        self._last_position = position.copy()
        self._scans.append(filtered)
        self._poses.append(np.asarray(pose, dtype=np.float64))
        if len(self._scans) >= self.params.max_scans:
            return self._emit()
        return None

    def finish(self) -> Optional[LocalMap]:
        return self._emit() if self._scans else None

    def _emit(self) -> LocalMap:
        local_map = build_local_map(
            self._next_id, self._scans, self._poses, self.params
        )
        logger.info(
            "Local map %d: %d scans, %d points, stamps %.3f..%.3f",
            local_map.id,
            len(local_map),
            local_map.merged_points.shape[0],
            local_map.scans[0].stamp,
            local_map.scans[-1].stamp,
        )
        self._next_id += 1
        self._scans, self._poses = [], []
        return local_map


def accumulate(
    stream: Iterable[tuple[LabeledPointCloud, Pose]],
    params: Optional[AccumulationParams] = None,
) -> Iterator[LocalMap]:
    """Turn a time-ordered stream of (scan, odometry pose) into local maps."""
    accumulator = LocalMapAccumulator(params or AccumulationParams())
    for scan, pose in stream:
        local_map = accumulator.push(scan, pose)
        if local_map is not None:
            yield local_map
    remainder = accumulator.finish()
    if remainder is not None:
        yield remainder
