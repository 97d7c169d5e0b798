"""
Ray-traced plausibility of a registered local map against the height map.

Every measured ray is traversed over the height map cells with Bresenham's
line algorithm. Distances use the cell metric: the distance of a cell from
the origin is ``cell_size * |cell - origin_cell|``. For each ray:

* ``c_ray = min(d_m / d_p, 1)`` where ``d_m`` is the distance of the first
  cell whose max height exceeds the ray height there (``inf`` if none) and
  ``d_p`` the distance of the endpoint cell;
* ``c_hit = 1`` iff the endpoint cell is higher than the endpoint by more than
  ``epsilon`` and ``|d_m - d_p| < theta``.

The local map score is the mean over scans of the per-scan mean of
``w * c_ray + (1 - w) * c_hit``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from tools_georef.common.exceptions import UnscorableError
from tools_georef.common.lie import transform_points
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import PlausibilityParams
from tools_georef.common.types import FloatArray, IntArray, Pose, Vector3
from tools_georef.model.builder import GeoModel
from tools_georef.model.height_map import HeightMap
from tools_georef.scans.pipeline import LocalMap

logger = setup_logger(__name__)


@dataclass(frozen=True)
class RayScores:
    """Per-ray scores; ``flagged`` marks rays whose origin is not above ground."""

    c_ray: FloatArray
    c_hit: FloatArray
    flagged: np.ndarray
    d_model: FloatArray
    d_measured: FloatArray


def bresenham(start: IntArray, end: IntArray) -> IntArray:
    """
    Cells of the 2D Bresenham line from ``start`` to ``end`` inclusive.

    The minor coordinate of step ``k`` along the major axis is
    ``minor_0 + sign * floor((2 k |d_minor| + n) / (2 n))``, ``n = |d_major|``,
    which is the classic integer algorithm with ties rounded away from the
    start.
    """
    cells, _ = _traverse(np.asarray(start).reshape(1, 2), np.asarray(end).reshape(1, 2))
    return cells


def _traverse(starts: IntArray, ends: IntArray) -> tuple[IntArray, IntArray]:
    """
    Batched Bresenham traversal.

    Returns:
        tuple[IntArray, IntArray]: Stacked cells of all rays (M, 2) and the
        ray index of every cell (M,), rays in input order, cells start to end
    """
    delta = ends - starts
    steps = np.abs(delta).max(axis=1)
    ray = np.repeat(np.arange(len(starts)), steps + 1)
    first = np.concatenate([[0], np.cumsum(steps + 1)[:-1]])
    k = np.arange(ray.size) - first[ray]

    n = steps[ray][:, None]
    span = np.abs(delta[ray])
    sign = np.sign(delta[ray])
    # The major axis (|d| == n) advances every step; diagonals have two.
    along = np.where(
        span == n,
        sign * k[:, None],
        sign * ((2 * k[:, None] * span + n) // (2 * np.maximum(n, 1))),
    )
    return starts[ray] + along, ray


def score_rays(
    origins: FloatArray,
    endpoints: FloatArray,
    hmap: HeightMap,
    params: Optional[PlausibilityParams] = None,
) -> RayScores:
    """
    Score rays against the height map (vectorized ``ray_score``).

    A ray whose origin cell is at or above the origin height is flagged and
    gets ``(0, 0)``. A ray whose endpoint falls in the origin cell gets
    ``(1, 0)``. Empty cells never block.
    """
    params = params or PlausibilityParams()
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    endpoints = np.atleast_2d(np.asarray(endpoints, dtype=np.float64))
    if origins.shape[0] == 1 and endpoints.shape[0] > 1:
        origins = np.repeat(origins, endpoints.shape[0], axis=0)

    start_cells = hmap.cell_of(origins)
    end_cells = hmap.cell_of(endpoints)
    d_measured = hmap.cell_size * np.linalg.norm(end_cells - start_cells, axis=1)

    ground_at_origin = hmap.value(start_cells)
    flagged = np.isfinite(ground_at_origin) & (ground_at_origin >= origins[:, 2])

    cells, ray = _traverse(start_cells, end_cells)
    d_cell = hmap.cell_size * np.linalg.norm(cells - start_cells[ray], axis=1)
    fraction = np.divide(
        d_cell, d_measured[ray], out=np.zeros_like(d_cell), where=d_measured[ray] > 0
    )
    ray_height = origins[ray, 2] + fraction * (endpoints[ray, 2] - origins[ray, 2])
    model_height = hmap.value(cells)
    blocked = np.isfinite(model_height) & (model_height > ray_height)

    d_model = np.full(len(origins), np.inf)
    hit_distance = np.where(blocked, d_cell, np.inf)
    np.minimum.at(d_model, ray, hit_distance)

    zero_length = d_measured <= 0.0
    c_ray = np.ones(len(origins))
    finite = ~zero_length & np.isfinite(d_model)
    c_ray[finite] = np.minimum(d_model[finite] / d_measured[finite], 1.0)

    end_model = hmap.value(end_cells)
    c_hit = (
        np.isfinite(end_model)
        & (end_model > endpoints[:, 2] + params.epsilon)
        & (np.abs(d_model - d_measured) < params.theta)
        & ~zero_length
    ).astype(np.float64)

    c_ray[flagged] = 0.0
    c_hit[flagged] = 0.0
    return RayScores(c_ray, c_hit, flagged, d_model, d_measured)


def ray_score(
    origin: Vector3,
    endpoint: Vector3,
    hmap: HeightMap,
    params: Optional[PlausibilityParams] = None,
) -> tuple[float, float]:
    """Scores ``(c_ray, c_hit)`` of a single ray."""
    scores = score_rays(
        np.reshape(origin, (1, 3)), np.reshape(endpoint, (1, 3)), hmap, params
    )
    if scores.flagged[0]:
        logger.debug("Ray origin %s is not above ground", origin)
    return float(scores.c_ray[0]), float(scores.c_hit[0])


def voxel_filter(points: FloatArray, voxel_size: float) -> FloatArray:
    """Centroid of the points in every occupied voxel, sorted by voxel index."""
    if points.shape[0] == 0:
        return points
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def plausibility(
    local_map: LocalMap,
    pose: Pose,
    model: GeoModel,
    params: Optional[PlausibilityParams] = None,
) -> float:
    """
    Plausibility score ``s_W`` of ``local_map`` placed in the model by ``pose``.

    Raises:
        UnscorableError: If no point survives voxel filtering
    """
    params = params or PlausibilityParams()
    scan_scores: list[float] = []
    for scan, relative in zip(local_map.scans, local_map.relative_poses):
        to_model = pose @ relative
        filtered = voxel_filter(scan.points, params.voxel_filter_size)
        if filtered.shape[0] == 0:
            continue
        origin = to_model[:3, 3].reshape(1, 3)
        endpoints = transform_points(to_model, filtered)
        scores = score_rays(origin, endpoints, model.height_map, params)
        combined = params.w * scores.c_ray + (1.0 - params.w) * scores.c_hit
        scan_scores.append(float(combined.mean()))
    if not scan_scores:
        raise UnscorableError(f"local map {local_map.id} has no points to score")
    return float(np.mean(scan_scores))
