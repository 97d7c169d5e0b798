"""
This module defines type aliases and enumerations shared across the
georeferencing tools package: array shapes, poses, stamps, semantic classes
and graph edge kinds.
"""

from enum import Enum, IntEnum
from typing import Any, TypeAlias

import numpy as np
import numpy.typing as npt

# Basic types
FloatArray: TypeAlias = npt.NDArray[np.float64]  # Generic float64 array
IntArray: TypeAlias = npt.NDArray[np.int64]  # Generic int64 array
Vector2: TypeAlias = npt.NDArray[np.float64]  # Shape (2,), meters
Vector3: TypeAlias = npt.NDArray[np.float64]  # Shape (3,), SI units
Vector6: TypeAlias = npt.NDArray[np.float64]  # Tangent (rho, phi), shape (6,)
Vector9: TypeAlias = npt.NDArray[np.float64]  # IMU residual (dR, dv, dp)
Matrix3: TypeAlias = npt.NDArray[np.float64]  # Shape (3, 3)
Matrix6: TypeAlias = npt.NDArray[np.float64]  # Shape (6, 6)
PointArray: TypeAlias = npt.NDArray[np.float64]  # Shape (N, 3), meters
Pose: TypeAlias = npt.NDArray[np.float64]  # Homogeneous SE(3), shape (4, 4)
Quaternion: TypeAlias = npt.NDArray[np.float64]  # Unit (x, y, z, w), shape (4,)
Stamp: TypeAlias = float  # Time in seconds
LabelArray: TypeAlias = npt.NDArray[np.uint8]  # Semantic class ids, shape (N,)
JacobianBlocks: TypeAlias = dict[Any, FloatArray]  # Parameter block -> Jacobian


class SemanticClass(IntEnum):
    """Class table of the labeled point clouds (LPC1 label byte)."""

    UNLABELED = 0
    GROUND = 1
    BUILDING = 2
    VEGETATION = 3
    PERSON = 4
    VEHICLE = 5
    OTHER = 6


MODEL_CLASSES: frozenset[SemanticClass] = frozenset(
    {SemanticClass.GROUND, SemanticClass.BUILDING}
)  # Classes present in the geospatial model


class EdgeKind(str, Enum):
    """Residual types of the spline pose graph."""

    ABSOLUTE_POSE = "absolute_pose"
    ABSOLUTE_POSITION = "absolute_position"
    ODOMETRY = "odometry"
    IMU = "imu"
    RELATIVE = "relative"
    BIAS_WALK = "bias_walk"
    BIAS_PRIOR = "bias_prior"


class OdometryMode(str, Enum):
    """Where local-map accumulation takes its odometry from."""

    TUM = "tum"
    INTERNAL = "internal"


class GnssMode(str, Enum):
    """Which absolute constraints the optimizer receives."""

    RAW = "raw"
    REFINED = "refined"
    BOTH = "both"


class RejectionReason(str, Enum):
    """Why a local map did not produce a refined pose."""

    NONE = ""
    NO_CONVERGENCE = "no_convergence"
    CONDITION_NUMBER = "condition_number"
    SCORE = "score"
    UNSCORABLE = "unscorable"
    OUT_OF_MODEL = "out_of_model"
