from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, ClassVar, Iterable, Iterator, Optional

from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import OdometryMode, Pose

if TYPE_CHECKING:
    from tools_georef.scans.cloud import LabeledPointCloud

logger = setup_logger(__name__)


class AbstractOdometrySource(ABC):
    """Abstract odometry provider feeding local-map accumulation"""

    mode: ClassVar[OdometryMode]

    @abstractmethod
    def estimate(self, scan: "LabeledPointCloud") -> Optional[Pose]:
        """Pose of ``scan`` in the gravity-aligned odometry frame, or ``None``."""

    def track(
        self, scans: Iterable["LabeledPointCloud"]
    ) -> Iterator[tuple["LabeledPointCloud", Pose]]:
        for scan in scans:
            pose = self.estimate(scan)
            if pose is None:
                logger.warning(
                    "No %s odometry for scan %.3f, skipped",
                    self.mode.value,
                    scan.stamp,
                )
                continue
            yield scan, pose
