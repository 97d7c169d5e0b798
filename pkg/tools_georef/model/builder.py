"""
Assembly of the georeferenced model from a building mesh and a DEM.

The model point set is the vertex set of the mesh subdivided to small
triangles merged with the bilinearly resampled DEM. All coordinates are
shifted by ``frame_origin`` (integer easting/northing) to keep magnitudes small.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from tools_georef.common.exceptions import ModelBuildError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import ModelParams
from tools_georef.common.types import FloatArray, Vector2
from tools_georef.geodata.dem import DemGrid
from tools_georef.geodata.mesh import IngestSummary, TriangleMesh, triangle_areas
from tools_georef.registration.surfels import SurfelMap, build_surfel_map

from .height_map import HeightMap, build_height_map

logger = setup_logger(__name__)

QUANTUM = 1e-4
_AREA_SLACK = 1e-9


@dataclass(frozen=True)
class GeoModel:
    """
    Registration-ready model in the shifted projected frame.

    Attributes:
        points (FloatArray): (N, 3) model points, frame origin subtracted
        surfels (SurfelMap): Surfel map of ``points``
        height_map (HeightMap): Max-height map of ``points``
        frame_origin (Vector2): Easting/northing subtracted from the source data
        params (ModelParams): Parameters the model was built with
    """

    points: FloatArray
    surfels: SurfelMap
    height_map: HeightMap
    frame_origin: Vector2
    params: ModelParams

    def to_local(self, xyz: FloatArray) -> FloatArray:
        """Projected coordinates to model coordinates."""
        shifted = np.array(xyz, dtype=np.float64)
        shifted[..., :2] -= self.frame_origin
        return shifted

    def to_projected(self, xyz: FloatArray) -> FloatArray:
        restored = np.array(xyz, dtype=np.float64)
        restored[..., :2] += self.frame_origin
        return restored


def subdivide_mesh(
    mesh: TriangleMesh, max_area: float, summary: Optional[IngestSummary] = None
) -> TriangleMesh:
    """
    Midpoint 4-split every triangle until its area is at most ``max_area``.

    Areas within a relative ``1e-9`` of the bound count as satisfying it, so a
    0.4 m^2 triangle splits exactly once for ``max_area = 0.1``. Degenerate
    triangles pass through unchanged and are counted in ``summary``.
    Identical vertices of the result are shared.

    Raises:
        ModelBuildError: If ``max_area`` is not positive
    """
    if not max_area > 0:
        raise ModelBuildError(f"max_area must be > 0, got {max_area}")
    if mesh.n_triangles == 0:
        return TriangleMesh.empty()

    a, b, c = mesh.corners()
    degenerate = int((triangle_areas(a, b, c) <= 0.0).sum())
    if degenerate:
        logger.warning("%d degenerate triangles passed through subdivision", degenerate)
        if summary is not None:
            summary.degenerate_triangles += degenerate

    finished: list[tuple[FloatArray, FloatArray, FloatArray]] = []
    limit = max_area * (1.0 + _AREA_SLACK)
    while a.shape[0]:
        small = triangle_areas(a, b, c) <= limit
        finished.append((a[small], b[small], c[small]))
        a, b, c = a[~small], b[~small], c[~small]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        a, b, c = (
            np.concatenate([a, ab, ca, ab]),
            np.concatenate([ab, b, bc, bc]),
            np.concatenate([ca, bc, c, ca]),
        )

    corners = np.stack(
        [np.concatenate([f[k] for f in finished]) for k in range(3)], axis=1
    ).reshape(-1, 3)
    vertices, inverse = np.unique(corners, axis=0, return_inverse=True)
    return TriangleMesh(vertices, inverse.reshape(-1, 3))


def mesh_to_points(mesh: TriangleMesh) -> FloatArray:
    """
    Vertex set of a mesh, deduplicated after quantization to 0.1 mm.

    The first vertex of every quantization cell is kept; output is sorted by
    quantized coordinate.
    """
    if mesh.n_vertices == 0:
        return np.zeros((0, 3))
    used = np.unique(mesh.triangles) if mesh.n_triangles else np.arange(mesh.n_vertices)
    vertices = mesh.vertices[used]
    keys = np.rint(vertices / QUANTUM).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return vertices[first]


def sample_dem(grid: DemGrid, xy: FloatArray) -> FloatArray:
    """
    Bilinear height of the DEM at planar positions.

    Returns NaN where a position is outside the grid or any of its four
    surrounding source cells is no-data.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    u = (xy[:, 0] - grid.origin[0]) / grid.spacing
    v = (xy[:, 1] - grid.origin[1]) / grid.spacing
    inside = (u >= 0) & (v >= 0) & (u <= grid.ncols - 1) & (v <= grid.nrows - 1)

    c0 = np.clip(np.floor(u).astype(np.int64), 0, max(grid.ncols - 2, 0))
    r0 = np.clip(np.floor(v).astype(np.int64), 0, max(grid.nrows - 2, 0))
    c1 = np.minimum(c0 + 1, grid.ncols - 1)
    r1 = np.minimum(r0 + 1, grid.nrows - 1)
    fx = np.where(grid.ncols > 1, u - c0, 0.0)
    fy = np.where(grid.nrows > 1, v - r0, 0.0)

    valid = (
        inside
        & grid.valid[r0, c0]
        & grid.valid[r0, c1]
        & grid.valid[r1, c0]
        & grid.valid[r1, c1]
    )
    h = grid.heights
    heights = (
        (1.0 - fx) * (1.0 - fy) * h[r0, c0]
        + fx * (1.0 - fy) * h[r0, c1]
        + (1.0 - fx) * fy * h[r1, c0]
        + fx * fy * h[r1, c1]
    )
    return np.where(valid, heights, np.nan)


def interpolate_dem(grid: DemGrid, target_pitch: float) -> FloatArray:
    """
    Resample the DEM on a regular lattice of ``target_pitch``.

    The lattice starts at the grid origin and covers the grid extent; lattice
    points with a no-data corner are omitted.

    Raises:
        ModelBuildError: If the pitch is not in (0, grid.spacing]
    """
    if not 0 < target_pitch <= grid.spacing + 1e-12:
        raise ModelBuildError(
            f"target pitch must be in (0, {grid.spacing}], got {target_pitch}"
        )
    extent = np.array([grid.ncols - 1, grid.nrows - 1]) * grid.spacing
    counts = np.floor(extent / target_pitch + 1e-9).astype(np.int64) + 1
    xs = grid.origin[0] + target_pitch * np.arange(counts[0])
    ys = grid.origin[1] + target_pitch * np.arange(counts[1])
    gx, gy = np.meshgrid(xs, ys)
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    heights = sample_dem(grid, xy)
    keep = np.isfinite(heights)
    return np.column_stack([xy[keep], heights[keep]])


def assemble_model(
    mesh: TriangleMesh, dem: DemGrid, params: Optional[ModelParams] = None
) -> GeoModel:
    """
    Merge building and terrain points into a ``GeoModel``.

    Raises:
        ModelBuildError: If the combined point set is empty
    """
    params = params or ModelParams()
    mesh_points = mesh_to_points(subdivide_mesh(mesh, params.mesh_max_area))
    pitch = min(params.dem_pitch, dem.spacing)
    dem_points = interpolate_dem(dem, pitch)
    points = np.concatenate([mesh_points, dem_points])
    if points.shape[0] == 0:
        raise ModelBuildError("model has no points (empty mesh and DEM)")

    frame_origin = np.floor(points[:, :2].min(axis=0))
    points[:, :2] -= frame_origin
    height_map = build_height_map(points, params.height_cell)
    surfels = build_surfel_map(points, params.surfel_levels, params.surfel_min_points)

    logger.info(
        "Model assembled: %d mesh + %d DEM points, frame origin (%.0f, %.0f), "
        "height map %dx%d, %d surfels",
        mesh_points.shape[0],
        dem_points.shape[0],
        frame_origin[0],
        frame_origin[1],
        height_map.ncols,
        height_map.nrows,
        surfels.n_surfels,
    )
    return GeoModel(
        points=points,
        surfels=surfels,
        height_map=height_map,
        frame_origin=frame_origin,
        params=params,
    )
