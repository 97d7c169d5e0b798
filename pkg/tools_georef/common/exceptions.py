"""
Exception hierarchy shared by every module of the package.

Each exception logs itself when raised so that diagnostics reach the rotating
log file even when the caller swallows the error (e.g. a rejected hypothesis).
"""

from typing import Any, Optional

from .logger_ import setup_logger

logger = setup_logger(__name__)


class GeorefError(Exception):
    """
    Base exception for all georeferencing errors.

    Attributes:
        module (str): Module that raised the error (e.g. ``geo-ingest``)
        message (str): Human readable diagnostic
        details (dict[str, Any]): Optional structured context
    """

    module: str = "georef"

    def __init__(
        self,
        message: str,
        module: Optional[str] = None,
        details: Optional[dict[str, Any]] = None,
    ) -> None:
        if module is not None:
            self.module = module
        self.message = message
        self.details = details or {}

        logger.error(
            "%s raised: module=%s, message=%s, details=%s",
            type(self).__name__,
            self.module,
            message,
            self.details,
        )
        super().__init__(f"[{self.module}] {message}")


class GeodataParseError(GeorefError):
    """Malformed CityGML, DEM or mesh input."""

    module = "geo-ingest"


class ModelBuildError(GeorefError):
    """The georeferenced model cannot be assembled."""

    module = "model-builder"


class OutOfModelError(GeorefError):
    """A position lies outside the model's height map bounds."""

    module = "gnss-refine"


class RegistrationError(GeorefError):
    """Surfel map construction or registration failure."""

    module = "surfel-registration"


class ScanPipelineError(GeorefError):
    """Scan filtering/accumulation failure (e.g. non-monotonic stamps)."""

    module = "scan-pipeline"


class UnscorableError(GeorefError):
    """No point survived filtering, the plausibility score is undefined."""

    module = "gnss-refine"


class SplineSupportError(GeorefError):
    """A stamp lies outside the spline's valid support."""

    module = "trajectory-spline"


class PreintegrationError(GeorefError):
    """IMU batch cannot be preintegrated."""

    module = "imu-preint"


class GraphError(GeorefError):
    """Pose graph is malformed or its normal equations are indefinite."""

    module = "pose-graph"


class AnchorInitializationError(GraphError):
    """Anchor yaw is unobservable from the given correspondences."""


class SimulationError(GeorefError):
    """Synthetic scene or flight cannot be generated."""

    module = "synth-sim"


class FormatError(GeorefError):
    """A file does not follow its documented format."""

    module = "formats"
