"""
Parser for the CityGML LOD-2 subset that carries building geometry.

Only ``gml:Polygon`` exterior rings below ``bldg:Building`` elements are read,
with coordinates given either as one ``posList`` of x y z triples or as a
sequence of ``pos`` elements. Namespaces are matched by local name, so both
namespaced and bare documents are accepted. Interior rings and XLink
references are rejected.
"""

from typing import Optional

import numpy as np
from lxml import etree

from tools_georef.common.exceptions import GeodataParseError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray

from .mesh import IngestSummary, TriangleMesh, triangle_areas

logger = setup_logger(__name__)

XLINK_HREF = "{http://www.w3.org/1999/xlink}href"
GML_ID = "{http://www.opengis.net/gml}id"
_EXTERIOR_TAGS = {"exterior", "outerBoundaryIs"}
_INTERIOR_TAGS = {"interior", "innerBoundaryIs"}


def _local(element: etree._Element) -> str:
    tag = element.tag
    if not isinstance(tag, str):
        return ""
    return etree.QName(tag).localname


def _describe(element: etree._Element) -> str:
    gml_id = element.get(GML_ID) or element.get("id")
    where = f"line {element.sourceline}" if element.sourceline else "unknown line"
    return f"<{_local(element)}{' id=' + gml_id if gml_id else ''}> at {where}"


def _byte_offset(document: bytes, line: int, column: int) -> int:
    lines = document.split(b"\n")
    before = sum(len(chunk) + 1 for chunk in lines[: max(line - 1, 0)])
    return before + max(column - 1, 0)


def _parse_document(document: bytes) -> etree._Element:
    parser = etree.XMLParser(resolve_entities=False, no_network=True, huge_tree=False)
    try:
        return etree.fromstring(document, parser=parser)
    except etree.XMLSyntaxError as exc:
        line, column = exc.position
        offset = _byte_offset(document, line, column)
        raise GeodataParseError(
            f"malformed XML at byte {offset} (line {line}, column {column}): {exc.msg}",
            details={"byte_offset": offset, "line": line},
        ) from exc


def _ring_coordinates(ring: etree._Element) -> FloatArray:
    """Coordinates of one ``LinearRing`` as an (n, 3) array."""
    tokens: list[str] = []
    for child in ring:
        name = _local(child)
        if name == "posList":
            dimension = child.get("srsDimension")
            if dimension is not None and dimension != "3":
                raise GeodataParseError(
                    f"{_describe(child)} has srsDimension={dimension}, "
                    "only 3D is supported"
                )
            tokens.extend((child.text or "").split())
        elif name in ("pos", "coordinates"):
            tokens.extend((child.text or "").replace(",", " ").split())
    if len(tokens) % 3:
        raise GeodataParseError(
            f"{_describe(ring)} holds {len(tokens)} coordinates, not divisible by 3"
        )
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64).reshape(-1, 3)
    except ValueError as exc:
        raise GeodataParseError(f"non-numeric coordinate in {_describe(ring)}") from exc


def _fan(coords: FloatArray) -> np.ndarray:
    n = coords.shape[0]
    first = np.zeros(n - 2, dtype=np.int64)
    second = np.arange(1, n - 1, dtype=np.int64)
    return np.stack([first, second, second + 1], axis=1)


def _polygon_exterior(polygon: etree._Element) -> Optional[etree._Element]:
    exterior: Optional[etree._Element] = None
    for child in polygon:
        name = _local(child)
        if name in _INTERIOR_TAGS:
            raise GeodataParseError(
                f"{_describe(polygon)} has an interior ring (unsupported)"
            )
        if name in _EXTERIOR_TAGS:
            exterior = child
    if exterior is None:
        return None
    for ring in exterior:
        if _local(ring) == "LinearRing":
            return ring
    return None


def parse_citygml_subset(
    document: bytes, summary: Optional[IngestSummary] = None
) -> TriangleMesh:
    """
    Triangulate every building polygon of a CityGML-subset document.

    Each exterior ring is closed-point-stripped and fan-triangulated from its
    first vertex; ring vertices are appended to the mesh as they are (no
    cross-ring deduplication). Coordinates pass through unchanged.

    Args:
        document (bytes): XML document
        summary (Optional[IngestSummary]): Counters updated in place

    Returns:
        TriangleMesh: All triangles of all building surfaces

    Raises:
        GeodataParseError: Malformed XML (byte offset), coordinate count not a
            multiple of 3, interior rings or XLink references
    """
    summary = summary if summary is not None else IngestSummary()
    root = _parse_document(document)

    vertices: list[FloatArray] = []
    triangles: list[np.ndarray] = []
    n_vertices = 0

    buildings = [
        el
        for el in root.iter(tag=etree.Element)
        if _local(el) == "Building"
        and not any(_local(a) == "Building" for a in el.iterancestors())
    ]
    for building in buildings:
        for element in building.iter(tag=etree.Element):
            if element.get(XLINK_HREF) is not None:
                raise GeodataParseError(
                    f"{_describe(element)} uses an XLink reference (unsupported)"
                )
            if _local(element) != "Polygon":
                continue
            ring = _polygon_exterior(element)
            if ring is None:
                summary.skipped_elements.append(_describe(element))
                continue
            coords = _ring_coordinates(ring)
            summary.rings_read += 1
            if len(coords) > 1 and np.array_equal(coords[0], coords[-1]):
                coords = coords[:-1]
            if len(coords) < 3 or len(np.unique(coords, axis=0)) < 3:
                summary.skipped_rings += 1
                logger.warning(
                    "Skipping ring with < 3 distinct vertices: %s", _describe(ring)
                )
                continue
            fan = _fan(coords)
            areas = triangle_areas(
                coords[fan[:, 0]], coords[fan[:, 1]], coords[fan[:, 2]]
            )
            keep = areas > 0.0
            summary.degenerate_triangles += int((~keep).sum())
            if not keep.any():
                summary.skipped_rings += 1
                continue
            vertices.append(coords)
            triangles.append(fan[keep] + n_vertices)
            n_vertices += len(coords)

    if summary.skipped_rings or summary.degenerate_triangles:
        logger.warning(
            "CityGML ingest: %d rings read, %d skipped, "
            "%d degenerate triangles dropped",
            summary.rings_read,
            summary.skipped_rings,
            summary.degenerate_triangles,
        )
    logger.info(
        "Parsed %d buildings into %d triangles",
        len(buildings),
        sum(len(t) for t in triangles),
    )
    if not vertices:
        return TriangleMesh.empty()
    return TriangleMesh(np.concatenate(vertices), np.concatenate(triangles))
