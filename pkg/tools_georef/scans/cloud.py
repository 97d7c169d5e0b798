"""
Labeled point clouds and the LPC1 scan file format.

LPC1 layout (little-endian): ``b"LPC1"``, stamp f64, count u32, then per
point x, y, z as f32 and the class label as u8. A scan directory holds one
file per scan; lexicographic file order is time order.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Iterator

import numpy as np

from tools_georef.common.exceptions import FormatError, ScanPipelineError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import LabelArray, PointArray, SemanticClass, Stamp

logger = setup_logger(__name__)

MAGIC = b"LPC1"
SCAN_SUFFIX = ".lpc"
POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "u1")])
_MAX_LABEL = max(SemanticClass)


@dataclass(frozen=True)
class LabeledPointCloud:
    """One deskewed scan in the sensor frame."""

    stamp: Stamp
    points: PointArray
    labels: LabelArray

    def __post_init__(self) -> None:
        if not math.isfinite(self.stamp):
            raise FormatError(f"scan stamp must be finite, got {self.stamp}")
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if points.shape[0] != labels.shape[0]:
            raise FormatError("scan points and labels differ in length")
        if labels.size and labels.max() > _MAX_LABEL:
            raise FormatError(
                f"scan at {self.stamp} has unknown label {int(labels.max())}"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def class_counts(self) -> dict[SemanticClass, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {SemanticClass(int(v)): int(c) for v, c in zip(values, counts)}


def filter_scan(
    scan: LabeledPointCloud, keep_classes: Collection[SemanticClass]
) -> LabeledPointCloud:
    """Keep the points whose label is in ``keep_classes``, preserving order."""
    if not keep_classes:
        raise ScanPipelineError("keep_classes must not be empty")
    wanted = np.fromiter((int(c) for c in keep_classes), dtype=np.uint8)
    mask = np.isin(scan.labels, wanted)
    return LabeledPointCloud(scan.stamp, scan.points[mask], scan.labels[mask])


def encode_scan(scan: LabeledPointCloud) -> bytes:
    body = np.empty(len(scan), dtype=POINT_DTYPE)
    body["x"], body["y"], body["z"] = scan.points.T
    body["label"] = scan.labels
    return MAGIC + struct.pack("<dI", scan.stamp, len(scan)) + body.tobytes()


def decode_scan(data: bytes, source: str = "<bytes>") -> LabeledPointCloud:
    """
    Raises:
        FormatError: Wrong magic or size mismatch
    """
    header = len(MAGIC) + 12
    if len(data) < header or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: not an LPC1 scan")
    stamp, count = struct.unpack("<dI", data[len(MAGIC) : header])
    if len(data) != header + count * POINT_DTYPE.itemsize:
        raise FormatError(
            f"{source}: expected {count} points, got {len(data) - header} payload bytes"
        )
    body = np.frombuffer(data, dtype=POINT_DTYPE, offset=header, count=count)
    points = np.column_stack([body["x"], body["y"], body["z"]]).astype(np.float64)
    return LabeledPointCloud(stamp, points, body["label"].copy())


def write_scan(scan: LabeledPointCloud, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_scan(scan))


def read_scan(path: Path) -> LabeledPointCloud:
    return decode_scan(path.read_bytes(), str(path))


def scan_paths(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FormatError(f"scan directory not found: {directory}")
    return sorted(directory.glob(f"*{SCAN_SUFFIX}"), key=lambda p: p.name)


def iter_scan_directory(directory: Path) -> Iterator[LabeledPointCloud]:
    """Lazily read every scan of a directory in file-name order."""
    for path in scan_paths(directory):
        yield read_scan(path)


def load_scan_directory(directory: Path) -> list[LabeledPointCloud]:
    scans = list(iter_scan_directory(directory))
    logger.info("Loaded %d scans from %s", len(scans), directory)
    return scans
