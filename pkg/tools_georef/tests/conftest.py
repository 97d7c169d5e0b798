import os
import tempfile
from pathlib import Path

os.environ.setdefault(
    "GEOREF_LOG_DIR", str(Path(tempfile.gettempdir()) / "georef-test-logs")
)

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from tools_georef.common.lie import matrix_to_quat, so3_exp  # noqa: E402
from tools_georef.geodata import parse_citygml_subset, parse_dem_xyz  # noqa: E402
from tools_georef.model import GeoModel, assemble_model  # noqa: E402
from tools_georef.sim import (  # noqa: E402
    Building,
    SyntheticScene,
    scene_to_citygml,
    scene_to_dem_xyz,
)
from tools_georef.trajectory import SplineTrajectory  # noqa: E402

GML_HEADER = (
    b'<?xml version="1.0" encoding="UTF-8"?>\n'
    b'<core:CityModel xmlns:core="http://www.opengis.net/citygml/2.0" '
    b'xmlns:bldg="http://www.opengis.net/citygml/building/2.0" '
    b'xmlns:gml="http://www.opengis.net/gml">\n'
)


def ring(points: list[tuple[float, float, float]]) -> bytes:
    closed = points + points[:1]
    coords = " ".join(f"{x} {y} {z}" for x, y, z in closed)
    return (
        b"<gml:Polygon><gml:exterior><gml:LinearRing><gml:posList srsDimension=\"3\">"
        + coords.encode()
        + b"</gml:posList></gml:LinearRing></gml:exterior></gml:Polygon>"
    )


def box_faces(x0, y0, x1, y1, z0, z1) -> list[list[tuple[float, float, float]]]:
    bottom = [(x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)]
    top = [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)]
    walls = [
        [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],
        [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],
        [(x1, y1, z0), (x0, y1, z0), (x0, y1, z1), (x1, y1, z1)],
        [(x0, y1, z0), (x0, y0, z0), (x0, y0, z1), (x0, y1, z1)],
    ]
    return [bottom, top, *walls]


def citygml_document(boxes: list[tuple[float, ...]]) -> bytes:
    body = b""
    for index, box in enumerate(boxes):
        surfaces = b"".join(
            b"<bldg:boundedBy><bldg:WallSurface><bldg:lod2MultiSurface>"
            b"<gml:MultiSurface><gml:surfaceMember>"
            + ring(face)
            + b"</gml:surfaceMember></gml:MultiSurface>"
            b"</bldg:lod2MultiSurface></bldg:WallSurface></bldg:boundedBy>"
            for face in box_faces(*box)
        )
        body += (
            b'<core:cityObjectMember><bldg:Building gml:id="b'
            + str(index).encode()
            + b'">'
            + surfaces
            + b"</bldg:Building></core:cityObjectMember>\n"
        )
    return GML_HEADER + body + b"</core:CityModel>\n"


TWO_BUILDINGS = [
    (0.0, 0.0, 10.0, 6.0, 0.0, 8.0),
    (20.0, 5.0, 24.0, 17.0, 1.0, 4.0),
]


def box_area(x0, y0, x1, y1, z0, z1) -> float:
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    return 2 * dx * dy + 2 * dx * dz + 2 * dy * dz


@pytest.fixture
def two_building_gml() -> bytes:
    return citygml_document(TWO_BUILDINGS)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_street_scene() -> SyntheticScene:
    """
    Two rows of blocks around a street along x, well conditioned for registration.

    Axis-aligned walls sit on quarter meters so they cut height map cells in half.
    """
    return SyntheticScene(
        buildings=(
            Building(center=(-15.25, 14.25), size=(16.0, 10.0), height=12.0),
            Building(center=(12.0, 15.0), size=(14.0, 12.0), height=9.0, yaw=0.3),
            Building(center=(0.25, -16.25), size=(24.0, 10.0), height=15.0),
            Building(center=(28.25, -12.25), size=(8.0, 8.0), height=6.0),
        ),
        extent=(-45.0, -40.0, 45.0, 40.0),
        origin=(350000.0, 5650000.0),
        rng_seed=3,
    )


def scene_model(scene: SyntheticScene, dem_spacing: float = 1.0) -> GeoModel:
    """Georeferenced model built from the exported scene files."""
    mesh = parse_citygml_subset(scene_to_citygml(scene))
    dem = parse_dem_xyz(scene_to_dem_xyz(scene, dem_spacing))
    return assemble_model(mesh, dem)


def model_pose(model: GeoModel, scene: SyntheticScene, pose: np.ndarray) -> np.ndarray:
    """Scene-frame pose expressed in the model frame."""
    moved = np.array(pose, dtype=np.float64)
    moved[:3, 3] = model.to_local(pose[:3, 3] + np.array([*scene.origin, 0.0]))
    return moved


@pytest.fixture
def street_scene() -> SyntheticScene:
    return make_street_scene()


def random_spline(
    rng: np.random.Generator,
    n_knots: int = 8,
    degree: int = 3,
    dt: float = 0.5,
    t0: float = 0.0,
) -> SplineTrajectory:
    """Spline with random translation knots and a random walk of rotation knots."""
    rotation = so3_exp(rng.normal(size=3))
    quats = []
    for _ in range(n_knots):
        quats.append(matrix_to_quat(rotation))
        rotation = rotation @ so3_exp(0.3 * rng.normal(size=3))
    quats = np.array(quats)
    quats /= np.linalg.norm(quats, axis=1)[:, None]
    return SplineTrajectory(degree, t0, dt, 2.0 * rng.normal(size=(n_knots, 3)), quats)
