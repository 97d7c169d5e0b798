"""
Typed parameter models consumed by the library functions.

Every default equals the engineering default documented for the module; the
CLI builds these models from ``Settings`` so all tunables live in one place.
"""

import math
from pathlib import Path
from typing import Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .types import SemanticClass


class _FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class ModelParams(_FrozenModel):
    """Parameters used to assemble the georeferenced model."""

    mesh_max_area: float = Field(default=0.1, gt=0, description="m^2 per triangle")
    dem_target_area: float = Field(default=0.1, gt=0, description="m^2 per DEM sample")
    height_cell: float = Field(default=0.5, gt=0, description="Height map cell (m)")
    surfel_levels: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5)
    surfel_min_points: int = Field(default=6, ge=3)

    @property
    def dem_pitch(self) -> float:
        """Square lattice pitch whose cells have ``dem_target_area``."""
        return math.sqrt(self.dem_target_area)

    @field_validator("surfel_levels")
    @classmethod
    def validate_levels(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        """
        Validate that surfel levels are positive and ordered coarse to fine.

        Raises:
            ValueError: If a level is non-positive or levels are not decreasing
        """
        if not value or any(size <= 0 for size in value):
            raise ValueError("surfel levels must be positive")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError(f"surfel levels must decrease coarse to fine: {value}")
        return value


class RegistrationParams(_FrozenModel):
    """Gauss-Newton surfel-to-plane registration parameters."""

    max_iterations: int = Field(default=50, ge=1)
    update_tolerance: float = Field(default=1e-6, gt=0)
    huber_delta: float = Field(default=0.5, gt=0)
    min_matches: int = Field(default=10, ge=1)
    normal_agreement: float = Field(default=0.7, ge=0, le=1)
    initial_damping: float = Field(default=1e-4, ge=0)
    max_damping: float = Field(default=1e8, gt=0)
    debug_dump: Optional[Path] = None


class PlausibilityParams(_FrozenModel):
    """Ray-traced plausibility score and acceptance gate."""

    w: float = Field(default=0.5, ge=0, le=1, description="Weight of c_ray")
    epsilon: float = Field(default=0.2, gt=0, description="Height slack (m)")
    theta: float = Field(default=1.0, gt=0, description="Endpoint gate (m)")
    gamma: float = Field(default=0.6, gt=0, lt=1, description="Score threshold")
    tau_kappa: float = Field(default=100.0, gt=1, description="Condition ceiling")
    voxel_filter_size: float = Field(default=0.5, gt=0, description="m")


class SearchParams(_FrozenModel):
    """Grid search over horizontal offsets and optional yaw."""

    radius: float = Field(default=8.0, gt=0)
    step: float = Field(default=4.0, gt=0)
    yaw_steps: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)
    tie_tolerance: float = Field(default=1e-6, ge=0)

    @model_validator(mode="after")
    def validate_radius(self) -> Self:
        """
        Validate that the lattice has at least one ring around the prior.

        Raises:
            ValueError: If the radius is smaller than the step
        """
        if self.radius < self.step:
            raise ValueError(
                f"search radius {self.radius} must be >= step {self.step}"
            )
        return self


class AccumulationParams(_FrozenModel):
    """Motion-gated accumulation of filtered scans into local maps."""

    tau_move: float = Field(default=0.5, gt=0)
    max_scans: int = Field(default=20, ge=1)
    keep_classes: frozenset[SemanticClass] = frozenset(
        {SemanticClass.GROUND, SemanticClass.BUILDING}
    )
    surfel_levels: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5)
    surfel_min_points: int = Field(default=6, ge=3)

    @field_validator("keep_classes")
    @classmethod
    def validate_classes(
        cls, value: frozenset[SemanticClass]
    ) -> frozenset[SemanticClass]:
        if not value:
            raise ValueError("keep_classes must not be empty")
        return value


class ImuNoise(_FrozenModel):
    """Continuous-time IMU noise densities and bias random walks."""

    gyro_noise: float = Field(default=1.7e-4, ge=0, description="rad/s/sqrt(Hz)")
    accel_noise: float = Field(default=2.0e-3, ge=0, description="m/s^2/sqrt(Hz)")
    gyro_walk: float = Field(default=2.0e-5, ge=0, description="rad/s^2/sqrt(Hz)")
    accel_walk: float = Field(default=3.0e-3, ge=0, description="m/s^3/sqrt(Hz)")
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)


class EdgeNoise(_FrozenModel):
    """Default standard deviations and Huber deltas per edge type."""

    refined_position: float = Field(default=0.1, gt=0, description="m")
    refined_rotation_deg: float = Field(default=2.0, gt=0)
    raw_gnss_position: float = Field(default=3.0, gt=0, description="m")
    odometry_position: float = Field(default=0.05, gt=0)
    odometry_rotation_deg: float = Field(default=0.5, gt=0)
    relative_position: float = Field(default=0.1, gt=0)
    relative_rotation_deg: float = Field(default=1.0, gt=0)
    bias_prior_gyro: float = Field(default=0.05, gt=0)
    bias_prior_accel: float = Field(default=0.5, gt=0)
    huber_absolute: float = Field(default=1.0, gt=0)
    huber_odometry: float = Field(default=1.0, gt=0)
    huber_imu: float = Field(default=1.0, gt=0)
    huber_relative: float = Field(default=1.0, gt=0)


class OptimizerOptions(_FrozenModel):
    """Levenberg-Marquardt termination and damping schedule."""

    max_iterations: int = Field(default=100, ge=0)
    relative_decrease: float = Field(default=1e-9, ge=0)
    gradient_tolerance: float = Field(default=1e-10, ge=0)
    initial_damping: float = Field(default=1e-4, gt=0)
    max_damping: float = Field(default=1e12, gt=0)
    fix_first_knot: bool = True
    fix_anchor: Optional[bool] = None
    threads: int = Field(default=1, ge=1)


class LoopClosureParams(_FrozenModel):
    """Spatial loop-closure candidate search and gate."""

    radius: float = Field(default=15.0, gt=0)
    gate_ratio: float = Field(default=0.05, gt=0)
    include_adjacent: bool = True
