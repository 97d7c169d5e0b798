"""
Gridded digital elevation model read from "easting northing height" XYZ tiles.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from tools_georef.common.exceptions import GeodataParseError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, Vector2

logger = setup_logger(__name__)

DEFAULT_SPACING = 1.0
PITCH_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DemGrid:
    """
    Regular axis-aligned height grid.

    ``heights[row, col]`` is the height of the cell centered at
    ``origin + (col, row) * spacing``; rows run along northing. Cells without
    data hold NaN and are ``False`` in ``valid``.
    """

    origin: Vector2
    spacing: float
    heights: FloatArray
    valid: np.ndarray

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise GeodataParseError(f"DEM spacing must be > 0, got {self.spacing}")
        if self.heights.shape != self.valid.shape:
            raise GeodataParseError("DEM heights and validity mask differ in shape")
        if not np.all(np.isfinite(self.heights[self.valid])):
            raise GeodataParseError("DEM has non-finite heights in valid cells")

    @property
    def nrows(self) -> int:
        return int(self.heights.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.heights.shape[1])

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def cell_centers(self) -> FloatArray:
        """Easting/northing of every valid cell with its height, shape (n, 3)."""
        rows, cols = np.nonzero(self.valid)
        return np.column_stack(
            [
                self.origin[0] + cols * self.spacing,
                self.origin[1] + rows * self.spacing,
                self.heights[rows, cols],
            ]
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DemGrid):
            return NotImplemented
        return (
            np.array_equal(self.origin, other.origin)
            and self.spacing == other.spacing
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.heights[self.valid], other.heights[other.valid])
        )

    __hash__ = None  # type: ignore[assignment]


def _infer_spacing(coordinates: FloatArray) -> Optional[float]:
    gaps: list[FloatArray] = []
    for axis in range(2):
        values = np.unique(coordinates[:, axis])
        if values.size > 1:
            gaps.append(np.diff(values))
    if not gaps:
        return None
    positive = np.concatenate(gaps)
    positive = positive[positive > PITCH_TOLERANCE]
    return float(positive.min()) if positive.size else None


def _grid_indices(
    values: FloatArray, start: float, spacing: float, axis_name: str
) -> np.ndarray:
    steps = (values - start) / spacing
    index = np.rint(steps)
    misfit = np.abs(steps - index) * spacing
    if np.any(misfit > PITCH_TOLERANCE):
        bad = float(values[int(np.argmax(misfit))])
        raise GeodataParseError(
            f"inconsistent DEM pitch: {axis_name} {bad!r} "
            f"is not on the {spacing!r} m lattice",
            details={"coordinate": bad},
        )
    return index.astype(np.int64)


def grid_from_points(samples: FloatArray, spacing: Optional[float] = None) -> DemGrid:
    """
    Assemble a grid from (n, 3) samples on a regular lattice.

    Args:
        samples (FloatArray): easting, northing, height rows
        spacing (Optional[float]): Lattice pitch, inferred as the minimal
            positive coordinate gap when omitted

    Raises:
        GeodataParseError: Empty input, off-lattice samples or duplicate cells
    """
    if samples.size == 0:
        raise GeodataParseError("DEM has no samples")
    if spacing is None:
        spacing = _infer_spacing(samples)
        if spacing is None:
            logger.warning(
                "DEM spacing cannot be inferred, defaulting to %.1f m",
                DEFAULT_SPACING,
            )
            spacing = DEFAULT_SPACING

    origin = samples[:, :2].min(axis=0)
    cols = _grid_indices(samples[:, 0], float(origin[0]), spacing, "easting")
    rows = _grid_indices(samples[:, 1], float(origin[1]), spacing, "northing")
    flat = rows * (int(cols.max()) + 1) + cols
    if np.unique(flat).size != flat.size:
        raise GeodataParseError("DEM contains duplicate cells")

    heights = np.full((int(rows.max()) + 1, int(cols.max()) + 1), np.nan)
    valid = np.zeros(heights.shape, dtype=bool)
    heights[rows, cols] = samples[:, 2]
    valid[rows, cols] = True
    return DemGrid(origin=origin, spacing=float(spacing), heights=heights, valid=valid)


def parse_dem_xyz(document: bytes | str) -> DemGrid:
    """
    Parse an XYZ tile, one "E N H" triple per nonempty line.

    The result does not depend on line order.

    Raises:
        GeodataParseError: Non-numeric token (with line number), wrong field
            count or inconsistent pitch
    """
    text = document.decode("utf-8") if isinstance(document, bytes) else document
    rows: list[tuple[float, float, float]] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        fields = line.replace(",", " ").split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != 3:
            raise GeodataParseError(
                f"DEM line {line_number}: expected 3 values, got {len(fields)}",
                details={"line": line_number},
            )
        try:
            e, n, h = (float(f) for f in fields)
        except ValueError as exc:
            raise GeodataParseError(
                f"DEM line {line_number}: non-numeric token in {line.strip()!r}",
                details={"line": line_number},
            ) from exc
        if not all(math.isfinite(v) for v in (e, n, h)):
            raise GeodataParseError(f"DEM line {line_number}: non-finite value")
        rows.append((e, n, h))
    grid = grid_from_points(np.asarray(rows, dtype=np.float64).reshape(-1, 3))
    logger.info(
        "Parsed DEM %dx%d at %.3f m pitch (%d valid cells)",
        grid.ncols,
        grid.nrows,
        grid.spacing,
        grid.n_valid,
    )
    return grid


def merge_dem_grids(grids: Iterable[DemGrid]) -> DemGrid:
    """
    Concatenate tiles sharing one pitch; the first valid value wins on overlap.

    Raises:
        GeodataParseError: If tiles disagree on spacing
    """
    grids = list(grids)
    if not grids:
        raise GeodataParseError("no DEM tiles to merge")
    if len(grids) == 1:
        return grids[0]
    spacing = grids[0].spacing
    if any(abs(g.spacing - spacing) > PITCH_TOLERANCE for g in grids):
        raise GeodataParseError("DEM tiles have different pitches")

    samples = []
    taken: set[tuple[float, float]] = set()
    for grid in grids:
        for e, n, h in grid.cell_centers():
            key = (round(e / PITCH_TOLERANCE), round(n / PITCH_TOLERANCE))
            if key in taken:
                continue
            taken.add(key)
            samples.append((e, n, h))
    return grid_from_points(np.asarray(samples), spacing)
