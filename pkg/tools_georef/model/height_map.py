"""
2D max-height map: each cell stores the maximum height of the points in it.
"""

from dataclasses import dataclass

import numpy as np

from tools_georef.common.exceptions import ModelBuildError
from tools_georef.common.types import FloatArray, IntArray, Vector2


@dataclass(frozen=True)
class HeightMap:
    """
    Grid of maximum heights.

    ``cells[row, col]`` covers ``origin + [col, col+1) x [row, row+1) * cell_size``
    (rows along northing). Empty cells hold NaN.
    """

    origin: Vector2
    cell_size: float
    cells: FloatArray

    def __post_init__(self) -> None:
        if not self.cell_size > 0:
            raise ModelBuildError(
                f"height map cell size must be > 0, got {self.cell_size}"
            )

    @property
    def nrows(self) -> int:
        return int(self.cells.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.cells.shape[1])

    @property
    def upper(self) -> Vector2:
        return self.origin + self.cell_size * np.array([self.ncols, self.nrows])

    def cell_of(self, xy: FloatArray) -> IntArray:
        """``(col, row)`` indices of planar positions, shape (..., 2)."""
        scaled = (np.asarray(xy)[..., :2] - self.origin) / self.cell_size
        return np.floor(scaled).astype(np.int64)

    def inside(self, cells: IntArray) -> np.ndarray:
        cells = np.asarray(cells)
        return (
            (cells[..., 0] >= 0)
            & (cells[..., 0] < self.ncols)
            & (cells[..., 1] >= 0)
            & (cells[..., 1] < self.nrows)
        )

    def contains(self, xy: FloatArray) -> bool | np.ndarray:
        result = self.inside(self.cell_of(xy))
        return bool(result) if np.ndim(result) == 0 else result

    def value(self, cells: IntArray) -> FloatArray:
        """Cell values for integer ``(col, row)`` indices, NaN outside or empty."""
        cells = np.asarray(cells)
        inside = self.inside(cells)
        cols = np.where(inside, cells[..., 0], 0)
        rows = np.where(inside, cells[..., 1], 0)
        return np.where(inside, self.cells[rows, cols], np.nan)

    def height_at(self, xy: FloatArray) -> float | FloatArray:
        heights = self.value(self.cell_of(xy))
        return float(heights) if np.ndim(heights) == 0 else heights

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeightMap):
            return NotImplemented
        return (
            np.array_equal(self.origin, other.origin)
            and self.cell_size == other.cell_size
            and np.array_equal(self.cells, other.cells, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]


def build_height_map(points: FloatArray, cell_size: float) -> HeightMap:
    """
    Per-cell maximum height of a point set.

    The map origin is the minimum easting/northing of the points and the grid
    is just large enough to contain all of them.

    Raises:
        ModelBuildError: Empty input or non-positive cell size
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ModelBuildError("cannot build a height map from an empty point set")
    if not cell_size > 0:
        raise ModelBuildError(f"height map cell size must be > 0, got {cell_size}")

    origin = points[:, :2].min(axis=0)
    index = np.floor((points[:, :2] - origin) / cell_size).astype(np.int64)
    ncols, nrows = (index.max(axis=0) + 1).tolist()
    cells = np.full((nrows, ncols), np.nan)
    np.fmax.at(cells, (index[:, 1], index[:, 0]), points[:, 2])
    return HeightMap(origin=origin, cell_size=float(cell_size), cells=cells)
