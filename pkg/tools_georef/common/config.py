"""
Configuration module for the georeferencing tools.

This module provides settings management using Pydantic for validation and
layered loading. Values are resolved from (lowest to highest priority):
built-in defaults, a TOML configuration file, environment variables with the
``GEOREF_`` prefix (a ``.env`` file is loaded first) and explicit overrides
passed by the command line.
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from contextvars import ContextVar
from pathlib import Path
from typing import Any, ClassVar, Optional

from dotenv import find_dotenv, load_dotenv
from pydantic import ValidationError, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from .logger_ import setup_logger
from .models import (
    AccumulationParams,
    EdgeNoise,
    ImuNoise,
    LoopClosureParams,
    ModelParams,
    OptimizerOptions,
    PlausibilityParams,
    RegistrationParams,
    SearchParams,
)
from .types import SemanticClass

logger = setup_logger(__name__)

# Load environment variables from .env file, if any
_dotenv_file = find_dotenv(filename=".env", usecwd=True)
if _dotenv_file:
    load_dotenv(_dotenv_file)

_DEFAULT_CONFIG_FILE = Path(os.getenv("GEOREF_CONFIG_FILE", "georef.toml"))
_config_file: ContextVar[Optional[Path]] = ContextVar(
    "georef_config_file", default=_DEFAULT_CONFIG_FILE
)


def read_config_file(path: Optional[Path]) -> dict[str, Any]:
    """
    Read a TOML configuration file into a flat dictionary of setting names.

    Tables are flattened, so ``[plausibility] plaus_w = 0.4`` and a top-level
    ``PLAUS_W = 0.4`` are equivalent. Keys are case-insensitive.

    Args:
        path (Optional[Path]): TOML file, ignored when missing

    Returns:
        dict[str, Any]: Upper-cased setting names mapped to raw values
    """
    if path is None or not path.is_file():
        return {}
    with path.open("rb") as stream:
        raw = tomllib.load(stream)

    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                flat[sub_key.upper()] = sub_value
        else:
            flat[key.upper()] = value
    logger.debug("Read %d settings from %s", len(flat), path)
    return flat


class ConfigFileSource(PydanticBaseSettingsSource):
    """Settings source backed by the TOML file selected for this invocation."""

    def __init__(self, settings_cls: type[BaseSettings]) -> None:
        super().__init__(settings_cls)
        self._data = read_config_file(_config_file.get())
        unknown = sorted(set(self._data) - set(settings_cls.model_fields))
        if unknown:
            logger.warning("Ignoring unknown config keys: %s", ", ".join(unknown))

    def get_field_value(
        self, field: FieldInfo, field_name: str
    ) -> tuple[Any, str, bool]:
        return self._data.get(field_name), field_name, False

    def __call__(self) -> dict[str, Any]:
        return {
            name: value
            for name, value in self._data.items()
            if name in self.settings_cls.model_fields
        }


class Settings(BaseSettings):
    """
    Application settings class with validation.

    Attributes:
        PROJECT_NAME (str): Name reported in provenance headers
        DEBUG (bool): Debug mode flag (enables registration pair dumps)
        LOG_LEVEL (str): Console log level
        THREADS (int): Worker cap for parallel stages
        MESH_* / DEM_* / HEIGHT_CELL / SURFEL_*: model-builder tunables
        REG_*: surfel registration tunables
        KEEP_CLASSES / TAU_MOVE / MAX_SCANS: scan accumulation tunables
        PLAUS_*: plausibility score and acceptance gate (w, eps, theta, gamma,
            tau_kappa, voxel filter)
        SEARCH_* / YAW_STEPS: grid search lattice
        SPLINE_*: continuous-time trajectory
        GRAVITY / *_NOISE / *_WALK: IMU model
        SIGMA_* / HUBER_*: pose graph edge noise
        LOOP_*: loop closure search
        OPT_*: optimizer limits
    """

    model_config = SettingsConfigDict(
        env_prefix="GEOREF_", extra="ignore", validate_default=True
    )

    ALLOWED_LOG_LEVELS: ClassVar[list[str]] = ["DEBUG", "INFO", "WARNING", "ERROR"]

    # Basic application settings
    PROJECT_NAME: str = "tools-georef"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"
    THREADS: int = 1

    # Model builder
    MESH_MAX_AREA: float = 0.1
    DEM_TARGET_AREA: float = 0.1
    HEIGHT_CELL: float = 0.5
    SURFEL_LEVELS: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5)
    SURFEL_MIN_POINTS: int = 6

    # Registration
    REG_MAX_ITERATIONS: int = 50
    REG_UPDATE_TOLERANCE: float = 1e-6
    REG_HUBER_DELTA: float = 0.5
    REG_MIN_MATCHES: int = 10
    REG_NORMAL_AGREEMENT: float = 0.7
    REG_DEBUG_DUMP: Optional[Path] = None

    # Scan pipeline
    KEEP_CLASSES: list[str] = ["ground", "building"]
    TAU_MOVE: float = 0.5
    MAX_SCANS: int = 20

    # Plausibility
    PLAUS_W: float = 0.5
    PLAUS_EPSILON: float = 0.2
    PLAUS_THETA: float = 1.0
    PLAUS_GAMMA: float = 0.6
    PLAUS_TAU_KAPPA: float = 100.0
    PLAUS_VOXEL: float = 0.5

    # Grid search
    SEARCH_RADIUS: float = 8.0
    SEARCH_STEP: float = 4.0
    YAW_STEPS: int = 0
    ALTITUDE_TRUSTED: bool = False

    # Spline
    SPLINE_DEGREE: int = 3
    SPLINE_DT: float = 0.1
    EXPORT_RATE: float = 10.0

    # IMU
    GRAVITY: tuple[float, float, float] = (0.0, 0.0, -9.81)
    GYRO_NOISE: float = 1.7e-4
    ACCEL_NOISE: float = 2.0e-3
    GYRO_WALK: float = 2.0e-5
    ACCEL_WALK: float = 3.0e-3

    # Pose graph
    SIGMA_REF_POSITION: float = 0.1
    SIGMA_REF_ROTATION_DEG: float = 2.0
    SIGMA_GNSS: float = 3.0
    SIGMA_ODOM_POSITION: float = 0.05
    SIGMA_ODOM_ROTATION_DEG: float = 0.5
    SIGMA_REL_POSITION: float = 0.1
    SIGMA_REL_ROTATION_DEG: float = 1.0
    HUBER_ABSOLUTE: float = 1.0
    HUBER_ODOMETRY: float = 1.0
    HUBER_IMU: float = 1.0
    HUBER_RELATIVE: float = 1.0
    LOOP_RADIUS: float = 15.0
    LOOP_GATE: float = 0.05
    OPT_MAX_ITERATIONS: int = 100

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            ConfigFileSource(settings_cls),
        )

    @property
    def model_params(self) -> ModelParams:
        return ModelParams(
            mesh_max_area=self.MESH_MAX_AREA,
            dem_target_area=self.DEM_TARGET_AREA,
            height_cell=self.HEIGHT_CELL,
            surfel_levels=self.SURFEL_LEVELS,
            surfel_min_points=self.SURFEL_MIN_POINTS,
        )

    @property
    def registration_params(self) -> RegistrationParams:
        dump = self.REG_DEBUG_DUMP if self.DEBUG else None
        return RegistrationParams(
            max_iterations=self.REG_MAX_ITERATIONS,
            update_tolerance=self.REG_UPDATE_TOLERANCE,
            huber_delta=self.REG_HUBER_DELTA,
            min_matches=self.REG_MIN_MATCHES,
            normal_agreement=self.REG_NORMAL_AGREEMENT,
            debug_dump=dump,
        )

    @property
    def accumulation_params(self) -> AccumulationParams:
        return AccumulationParams(
            tau_move=self.TAU_MOVE,
            max_scans=self.MAX_SCANS,
            keep_classes=frozenset(
                SemanticClass[name.upper()] for name in self.KEEP_CLASSES
            ),
            surfel_levels=self.SURFEL_LEVELS,
            surfel_min_points=self.SURFEL_MIN_POINTS,
        )

    @property
    def plausibility_params(self) -> PlausibilityParams:
        return PlausibilityParams(
            w=self.PLAUS_W,
            epsilon=self.PLAUS_EPSILON,
            theta=self.PLAUS_THETA,
            gamma=self.PLAUS_GAMMA,
            tau_kappa=self.PLAUS_TAU_KAPPA,
            voxel_filter_size=self.PLAUS_VOXEL,
        )

    @property
    def search_params(self) -> SearchParams:
        return SearchParams(
            radius=self.SEARCH_RADIUS,
            step=self.SEARCH_STEP,
            yaw_steps=self.YAW_STEPS,
            threads=self.THREADS,
        )

    @property
    def imu_noise(self) -> ImuNoise:
        return ImuNoise(
            gyro_noise=self.GYRO_NOISE,
            accel_noise=self.ACCEL_NOISE,
            gyro_walk=self.GYRO_WALK,
            accel_walk=self.ACCEL_WALK,
            gravity=self.GRAVITY,
        )

    @property
    def edge_noise(self) -> EdgeNoise:
        return EdgeNoise(
            refined_position=self.SIGMA_REF_POSITION,
            refined_rotation_deg=self.SIGMA_REF_ROTATION_DEG,
            raw_gnss_position=self.SIGMA_GNSS,
            odometry_position=self.SIGMA_ODOM_POSITION,
            odometry_rotation_deg=self.SIGMA_ODOM_ROTATION_DEG,
            relative_position=self.SIGMA_REL_POSITION,
            relative_rotation_deg=self.SIGMA_REL_ROTATION_DEG,
            huber_absolute=self.HUBER_ABSOLUTE,
            huber_odometry=self.HUBER_ODOMETRY,
            huber_imu=self.HUBER_IMU,
            huber_relative=self.HUBER_RELATIVE,
        )

    @property
    def optimizer_options(self) -> OptimizerOptions:
        return OptimizerOptions(
            max_iterations=self.OPT_MAX_ITERATIONS, threads=self.THREADS
        )

    @property
    def loop_closure_params(self) -> LoopClosureParams:
        return LoopClosureParams(radius=self.LOOP_RADIUS, gate_ratio=self.LOOP_GATE)

    def log_settings(self, logger_: logging.Logger) -> None:
        """
        Log all settings values at DEBUG level.

        Args:
            logger_ (logging.Logger): Logger instance to use for output
        """
        for key, value in self.to_dict().items():
            logger_.debug(f"{key}: {value}")

    def to_dict(self) -> dict[str, Any]:
        """
        Convert settings to a plain dictionary.

        Returns:
            dict[str, Any]: Settings dictionary
        """
        return self.model_dump()

    def provenance_header(self, comment: str = "#") -> list[str]:
        """
        Render every setting as comment lines for report headers.

        Args:
            comment (str): Comment prefix of the target format

        Returns:
            list[str]: One ``<comment> KEY = value`` line per setting, sorted
        """
        return [
            f"{comment} {key} = {value}"
            for key, value in sorted(self.to_dict().items())
        ]

    @field_validator("KEEP_CLASSES")
    @classmethod
    def validate_keep_classes(cls, value: list[str]) -> list[str]:
        """
        Validate that every kept class exists in the class table.

        Raises:
            ValueError: If a class name is unknown or the list is empty
        """
        if not value:
            raise ValueError("KEEP_CLASSES must not be empty")
        known = {member.name.lower() for member in SemanticClass}
        unknown = [name for name in value if name.lower() not in known]
        if unknown:
            raise ValueError(
                f"Unknown classes {unknown}, must be one of {sorted(known)}"
            )
        return [name.lower() for name in value]

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, value: str) -> str:
        value = value.upper()
        if value not in Settings.ALLOWED_LOG_LEVELS:
            raise ValueError(
                f"LOG_LEVEL {value} must be one of {Settings.ALLOWED_LOG_LEVELS}"
            )
        return value

    @model_validator(mode="after")
    def validate_parameter_models(self) -> "Settings":
        """
        Build every parameter model once so range errors surface at load time.

        Raises:
            ValueError: If any derived parameter model rejects its values
        """
        try:
            for name in (
                "model_params",
                "registration_params",
                "accumulation_params",
                "plausibility_params",
                "search_params",
                "imu_noise",
                "edge_noise",
                "optimizer_options",
                "loop_closure_params",
            ):
                getattr(self, name)
        except ValidationError as exc:
            raise ValueError(f"Invalid parameter in {name}: {exc}") from exc
        if self.SPLINE_DEGREE < 1 or self.SPLINE_DT <= 0:
            raise ValueError("SPLINE_DEGREE must be >= 1 and SPLINE_DT > 0")
        return self


def load_settings(config_file: Optional[Path] = None, **overrides: Any) -> Settings:
    """
    Create layered settings for one invocation.

    Args:
        config_file (Optional[Path]): TOML file replacing the default one
        **overrides (Any): Highest-priority values (e.g. parsed CLI flags);
            ``None`` values are ignored so unset flags fall through

    Returns:
        Settings: Configured and validated settings instance
    """
    token = _config_file.set(
        config_file if config_file is not None else _DEFAULT_CONFIG_FILE
    )
    try:
        settings_ = Settings(**{k: v for k, v in overrides.items() if v is not None})
    finally:
        _config_file.reset(token)
    settings_.log_settings(logger)
    return settings_


def get_settings() -> Settings:
    """
    Create and return the default settings instance.

    Returns:
        Settings: Settings from defaults, config file and environment
    """
    return load_settings()


# Export settings instance for use in other modules
settings = get_settings()
