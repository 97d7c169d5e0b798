"""
Triangle mesh container and the internal line-oriented mesh format.

Format::

    MESH <nverts> <ntris>
    v <x> <y> <z>
    ...
    t <i> <j> <k>
    ...

Indices are 0-based; floats are written with ``repr`` so a round trip is exact.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from tools_georef.common.exceptions import GeodataParseError
from tools_georef.common.formats import format_float
from tools_georef.common.types import FloatArray, IntArray


@dataclass
class IngestSummary:
    """Counters of recoverable issues met while ingesting geodata."""

    rings_read: int = 0
    skipped_rings: int = 0
    degenerate_triangles: int = 0
    skipped_elements: list[str] = field(default_factory=list)

    def merge(self, other: "IngestSummary") -> None:
        self.rings_read += other.rings_read
        self.skipped_rings += other.skipped_rings
        self.degenerate_triangles += other.degenerate_triangles
        self.skipped_elements.extend(other.skipped_elements)


@dataclass(frozen=True)
class TriangleMesh:
    """
    Vertices in the projected frame (easting, northing, height) and
    vertex-index triples.
    """

    vertices: FloatArray
    triangles: IntArray

    def __post_init__(self) -> None:
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise GeodataParseError(
                f"triangle index out of range for {len(vertices)} vertices"
            )
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def corners(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Corner coordinates of every triangle, three (M, 3) arrays."""
        return (
            self.vertices[self.triangles[:, 0]],
            self.vertices[self.triangles[:, 1]],
            self.vertices[self.triangles[:, 2]],
        )

    def areas(self) -> FloatArray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def total_area(self) -> float:
        return float(self.areas().sum())


def triangle_areas(a: FloatArray, b: FloatArray, c: FloatArray) -> FloatArray:
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def merge_meshes(meshes: Iterable[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes (e.g. several tiles) re-basing triangle indices."""
    vertices: list[FloatArray] = []
    triangles: list[IntArray] = []
    offset = 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += mesh.n_vertices
    if not vertices:
        return TriangleMesh.empty()
    return TriangleMesh(np.concatenate(vertices), np.concatenate(triangles))


def dump_mesh(mesh: TriangleMesh, stream: TextIO) -> None:
    stream.write(f"MESH {mesh.n_vertices} {mesh.n_triangles}\n")
    for x, y, z in mesh.vertices:
        stream.write(f"v {format_float(x)} {format_float(y)} {format_float(z)}\n")
    for i, j, k in mesh.triangles:
        stream.write(f"t {i} {j} {k}\n")


def write_mesh(mesh: TriangleMesh, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as stream:
        dump_mesh(mesh, stream)


def parse_mesh(text: str) -> TriangleMesh:
    """
    Parse the internal mesh format.

    Raises:
        GeodataParseError: On a bad header, wrong record counts or bad tokens
    """
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines or lines[0][0] != "MESH" or len(lines[0]) != 3:
        raise GeodataParseError("mesh header 'MESH <nverts> <ntris>' missing")
    try:
        n_vertices, n_triangles = int(lines[0][1]), int(lines[0][2])
        body = lines[1:]
        if len(body) != n_vertices + n_triangles:
            raise GeodataParseError(
                f"mesh declares {n_vertices + n_triangles} records, found {len(body)}"
            )
        vertex_lines = body[:n_vertices]
        triangle_lines = body[n_vertices:]
        if any(v[0] != "v" or len(v) != 4 for v in vertex_lines) or any(
            t[0] != "t" or len(t) != 4 for t in triangle_lines
        ):
            raise GeodataParseError("mesh records must be 'v x y z' then 't i j k'")
        vertices = np.array(
            [[float(x) for x in v[1:]] for v in vertex_lines]
        ).reshape(-1, 3)
        triangles = np.array(
            [[int(i) for i in t[1:]] for t in triangle_lines], dtype=np.int64
        ).reshape(-1, 3)
    except ValueError as exc:
        raise GeodataParseError(f"bad token in mesh: {exc}") from exc
    return TriangleMesh(vertices, triangles)


def read_mesh(path: Path) -> TriangleMesh:
    return parse_mesh(path.read_text(encoding="utf-8"))
