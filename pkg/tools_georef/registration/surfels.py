"""
Multi-resolution Gaussian surfel maps.

A map holds one voxel grid per level (coarse to fine, default 4, 2, 1 and
0.5 m). Every voxel with at least ``min_points`` points becomes a surfel with
the sample mean and covariance of its points and the normal given by the
eigenvector of the smallest covariance eigenvalue.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from tools_georef.common.exceptions import RegistrationError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, IntArray, Pose

logger = setup_logger(__name__)

DEFAULT_LEVELS: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5)
DEFAULT_MIN_POINTS = 6


@dataclass(frozen=True)
class SurfelLevel:
    """Surfels of one voxel size, stored as parallel arrays."""

    voxel_size: float
    keys: IntArray
    means: FloatArray
    covariances: FloatArray
    normals: FloatArray
    eigenvalues: FloatArray
    counts: IntArray

    def __len__(self) -> int:
        return int(self.means.shape[0])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.means if len(self) else np.zeros((0, 3)))

    def voxel_keys(self, points: FloatArray) -> IntArray:
        return np.floor(points / self.voxel_size).astype(np.int64)


@dataclass(frozen=True)
class SurfelMap:
    """Immutable multi-resolution surfel map, levels ordered coarse to fine."""

    levels: tuple[SurfelLevel, ...]

    def __iter__(self) -> Iterator[SurfelLevel]:
        return iter(self.levels)

    @property
    def n_surfels(self) -> int:
        return sum(len(level) for level in self.levels)

    @property
    def voxel_sizes(self) -> tuple[float, ...]:
        return tuple(level.voxel_size for level in self.levels)

    def level(self, voxel_size: float) -> SurfelLevel | None:
        for candidate in self.levels:
            if abs(candidate.voxel_size - voxel_size) < 1e-9:
                return candidate
        return None

    def transformed(self, pose: Pose) -> "SurfelMap":
        """
        Express the surfels in another frame; voxel keys follow the moved means.
        """
        rot, trans = pose[:3, :3], pose[:3, 3]
        levels = []
        for level in self.levels:
            means = level.means @ rot.T + trans
            levels.append(
                SurfelLevel(
                    voxel_size=level.voxel_size,
                    keys=level.voxel_keys(means),
                    means=means,
                    covariances=rot @ level.covariances @ rot.T,
                    normals=level.normals @ rot.T,
                    eigenvalues=level.eigenvalues.copy(),
                    counts=level.counts.copy(),
                )
            )
        return SurfelMap(tuple(levels))


def _orient_normals(normals: FloatArray) -> FloatArray:
    # Sign fixed so the largest-magnitude component is positive.
    axis = np.abs(normals).argmax(axis=1)[:, None]
    dominant = np.take_along_axis(normals, axis, axis=1)
    return normals * np.where(dominant < 0.0, -1.0, 1.0)


def _build_level(points: FloatArray, voxel_size: float, min_points: int) -> SurfelLevel:
    keys = np.floor(points / voxel_size).astype(np.int64)
    unique_keys, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    n_voxels = unique_keys.shape[0]

    sums = np.zeros((n_voxels, 3))
    np.add.at(sums, inverse, points)
    means = sums / counts[:, None]

    centered = points - means[inverse]
    scatter = np.zeros((n_voxels, 3, 3))
    np.add.at(scatter, inverse, centered[:, :, None] * centered[:, None, :])

    keep = counts >= min_points
    counts = counts[keep]
    covariances = scatter[keep] / (counts - 1)[:, None, None]
    eigenvalues, eigenvectors = np.linalg.eigh(covariances)
    normals = (
        _orient_normals(eigenvectors[:, :, 0]) if counts.size else np.zeros((0, 3))
    )

    return SurfelLevel(
        voxel_size=float(voxel_size),
        keys=unique_keys[keep],
        means=means[keep],
        covariances=covariances,
        normals=normals,
        eigenvalues=eigenvalues,
        counts=counts.astype(np.int64),
    )


def build_surfel_map(
    points: FloatArray,
    levels: Sequence[float] = DEFAULT_LEVELS,
    min_points: int = DEFAULT_MIN_POINTS,
) -> SurfelMap:
    """
    Build the surfel map of a point set.

    Args:
        points (FloatArray): (N, 3) points
        levels (Sequence[float]): Voxel sizes, coarse to fine
        min_points (int): Minimum points per surfel (at least 3)

    Returns:
        SurfelMap: One level per voxel size; voxels below ``min_points`` omitted

    Raises:
        RegistrationError: If the point set is empty
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise RegistrationError("cannot build a surfel map from an empty point set")
    if min_points < 3:
        raise RegistrationError(f"min_points must be >= 3, got {min_points}")
    surfel_map = SurfelMap(
        tuple(_build_level(points, size, min_points) for size in levels)
    )
    logger.debug(
        "Surfel map from %d points: %s",
        points.shape[0],
        ", ".join(f"{lv.voxel_size:g} m={len(lv)}" for lv in surfel_map),
    )
    return surfel_map
