"""
Binary model cache (little-endian)::

    b"GEOM1"
    frame_origin        2 x f64
    point count         u64
    points              count x 3 x f64
    height map origin   2 x f64
    cell size           f64
    ncols, nrows        2 x u32
    cells               nrows x ncols x f32 (NaN = no data), row-major
    metadata length     u32
    metadata            UTF-8 JSON of the build parameters

Height values are rounded upward to float32 so every model point stays at or
below its cell after a round trip. The surfel map is rebuilt on load.
"""

import struct
from pathlib import Path

import numpy as np

from tools_georef.common.exceptions import FormatError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import ModelParams
from tools_georef.common.types import FloatArray
from tools_georef.registration.surfels import build_surfel_map

from .builder import GeoModel
from .height_map import HeightMap

logger = setup_logger(__name__)

MAGIC = b"GEOM1"


def round_up_float32(values: FloatArray) -> np.ndarray:
    """Smallest float32 values not below ``values`` (NaN preserved)."""
    narrow = values.astype(np.float32)
    low = narrow.astype(np.float64) < values
    narrow[low] = np.nextafter(narrow[low], np.float32(np.inf))
    return narrow


def save_model(model: GeoModel, path: Path) -> None:
    hmap = model.height_map
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = model.params.model_dump_json().encode("utf-8")
    with path.open("wb") as stream:
        stream.write(MAGIC)
        stream.write(np.asarray(model.frame_origin, dtype="<f8").tobytes())
        stream.write(struct.pack("<Q", model.points.shape[0]))
        stream.write(np.ascontiguousarray(model.points, dtype="<f8").tobytes())
        stream.write(np.asarray(hmap.origin, dtype="<f8").tobytes())
        stream.write(struct.pack("<dII", hmap.cell_size, hmap.ncols, hmap.nrows))
        stream.write(round_up_float32(hmap.cells).astype("<f4").tobytes())
        stream.write(struct.pack("<I", len(metadata)))
        stream.write(metadata)
    logger.info("Model written to %s (%d points)", path, model.points.shape[0])


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(
                f"{self.path}: truncated model cache at byte {self.offset}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(itemsize * count)
        return np.frombuffer(raw, dtype=dtype).astype(np.float64)


def load_model(path: Path) -> GeoModel:
    """
    Read a model cache and rebuild its surfel map.

    Raises:
        FormatError: Missing file, wrong magic or truncated content
    """
    if not path.is_file():
        raise FormatError(f"model cache not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a GEOM1 model cache")

    frame_origin = reader.array("<f8", 2)
    (count,) = struct.unpack("<Q", reader.take(8))
    points = reader.array("<f8", 3 * count).reshape(-1, 3)
    origin = reader.array("<f8", 2)
    cell_size, ncols, nrows = struct.unpack("<dII", reader.take(16))
    cells = reader.array("<f4", ncols * nrows).reshape(nrows, ncols)
    (meta_length,) = struct.unpack("<I", reader.take(4))
    params = ModelParams.model_validate_json(reader.take(meta_length).decode("utf-8"))

    return GeoModel(
        points=points,
        surfels=build_surfel_map(
            points, params.surfel_levels, params.surfel_min_points
        ),
        height_map=HeightMap(origin=origin, cell_size=cell_size, cells=cells),
        frame_origin=frame_origin,
        params=params,
    )
