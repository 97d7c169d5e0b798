"""
Synthetic worlds made of boxes over a planar ground, and the LiDAR renderer
that scans them.

Scene coordinates are local: projected easting/northing minus
``SyntheticScene.origin``. Exports add the origin back so the geospatial
parsers see projected coordinates.
"""

import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional

import numpy as np
from lxml import etree
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from tools_georef.common.exceptions import SimulationError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, Pose, SemanticClass, Stamp
from tools_georef.scans.cloud import LabeledPointCloud

logger = setup_logger(__name__)

CORE_NS = "http://www.opengis.net/citygml/2.0"
BLDG_NS = "http://www.opengis.net/citygml/building/2.0"
GML_NS = "http://www.opengis.net/gml"
_NSMAP = {None: CORE_NS, "bldg": BLDG_NS, "gml": GML_NS}
_NO_HIT = np.inf


class _SceneModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Building(_SceneModel):
    """Box with a rectangular footprint rotated by ``yaw`` about its center."""

    center: tuple[float, float]
    size: tuple[float, float] = Field(
        description="Footprint extent along the box axes (m)"
    )
    height: float = Field(gt=0, description="Roof height above the base (m)")
    yaw: float = Field(default=0.0, description="Footprint rotation (rad)")

    @model_validator(mode="after")
    def validate_size(self) -> "Building":
        if min(self.size) <= 0:
            raise ValueError(f"building footprint must be positive, got {self.size}")
        return self

    @property
    def axes(self) -> FloatArray:
        """Rows are the footprint's local x and y axes in the scene frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s], [-s, c]])

    def footprint(self) -> FloatArray:
        """Counter-clockwise footprint corners, shape (4, 2)."""
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return np.asarray(self.center) + local @ self.axes

    def contains(self, xy: FloatArray) -> np.ndarray:
        local = (np.atleast_2d(xy) - np.asarray(self.center)) @ self.axes.T
        return np.all(np.abs(local) <= np.asarray(self.size) / 2.0, axis=1)


class Ground(_SceneModel):
    """Plane ``z = height + slope_x * x + slope_y * y``."""

    height: float = 0.0
    slope: tuple[float, float] = (0.0, 0.0)

    def height_at(self, xy: FloatArray) -> FloatArray:
        xy = np.atleast_2d(xy)
        return self.height + self.slope[0] * xy[:, 0] + self.slope[1] * xy[:, 1]

    @property
    def normal(self) -> FloatArray:
        n = np.array([-self.slope[0], -self.slope[1], 1.0])
        return n / np.linalg.norm(n)


class Clutter(_SceneModel):
    """Sphere of vegetation or a person, invisible to the exported model."""

    center: tuple[float, float, float]
    radius: float = Field(gt=0)
    label: SemanticClass = SemanticClass.VEGETATION

    @field_validator("label", mode="before")
    @classmethod
    def parse_label(cls, value: Any) -> Any:
        if isinstance(value, str):
            try:
                return SemanticClass[value.upper()]
            except KeyError as exc:
                raise ValueError(f"unknown clutter class {value!r}") from exc
        return value


class SyntheticScene(_SceneModel):
    """
    Deterministic synthetic world.

    Attributes:
        buildings (tuple[Building, ...]): Boxes standing on the ground
        ground (Ground): Planar or gently sloped terrain
        clutter (tuple[Clutter, ...]): Non-model blobs
        extent (tuple[float, float, float, float]): xmin, ymin, xmax, ymax of
            the exported DEM (m, local)
        origin (tuple[float, float]): Projected easting/northing of the local origin
        rng_seed (int): Seed of every random stream derived from the scene
    """

    buildings: tuple[Building, ...] = ()
    ground: Ground = Ground()
    clutter: tuple[Clutter, ...] = ()
    extent: tuple[float, float, float, float] = (-60.0, -60.0, 60.0, 60.0)
    origin: tuple[float, float] = (350000.0, 5650000.0)
    rng_seed: int = 0

    @model_validator(mode="after")
    def validate_layout(self) -> "SyntheticScene":
        xmin, ymin, xmax, ymax = self.extent
        if xmax <= xmin or ymax <= ymin:
            raise ValueError(f"scene extent {self.extent} is empty")
        for index, building in enumerate(self.buildings):
            corners = building.footprint()
            if np.any(corners < (xmin, ymin)) or np.any(corners > (xmax, ymax)):
                raise ValueError(f"building {index} leaves the scene extent")
        return self

    def base_height(self, building: Building) -> float:
        """Lowest ground height under the footprint, so the box never floats."""
        return float(self.ground.height_at(building.footprint()).min())

    def roof_height(self, building: Building) -> float:
        return self.base_height(building) + building.height

    def surface_height(self, xy: FloatArray) -> FloatArray:
        """Top surface (roof or ground) below each query point."""
        xy = np.atleast_2d(xy)
        heights = self.ground.height_at(xy)
        for building in self.buildings:
            inside = building.contains(xy)
            roof = np.maximum(heights, self.roof_height(building))
            heights = np.where(inside, roof, heights)
        return heights

    def contains(self, xy: FloatArray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        xmin, ymin, xmax, ymax = self.extent
        return (
            (xy[:, 0] >= xmin)
            & (xy[:, 0] <= xmax)
            & (xy[:, 1] >= ymin)
            & (xy[:, 1] <= ymax)
        )


class LidarParams(_SceneModel):
    """Rotating multi-channel LiDAR."""

    channels: int = Field(default=16, ge=1)
    azimuth_resolution_deg: float = Field(default=1.0, gt=0, le=360)
    vertical_fov_deg: tuple[float, float] = (-45.0, 15.0)
    max_range: float = Field(default=80.0, gt=0)
    range_noise: float = Field(default=0.0, ge=0)

    def directions(self) -> FloatArray:
        """Unit ray directions in the sensor frame, channel-major."""
        low, high = (math.radians(v) for v in self.vertical_fov_deg)
        elevation = (
            np.linspace(low, high, self.channels)
            if self.channels > 1
            else np.array([low])
        )
        azimuth = np.radians(np.arange(0.0, 360.0, self.azimuth_resolution_deg))
        el, az = np.meshgrid(elevation, azimuth, indexing="ij")
        return np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        ).reshape(-1, 3)


def intersect_plane(
    origin: FloatArray, directions: FloatArray, normal: FloatArray, offset: float
) -> FloatArray:
    """Ray parameter of the hit with ``normal . p = offset``, ``inf`` when missed."""
    denom = directions @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - origin @ normal) / denom
    return np.where((np.abs(denom) > 1e-12) & (t > 0), t, _NO_HIT)


def intersect_box(
    origin: FloatArray, directions: FloatArray, lower: FloatArray, upper: FloatArray
) -> FloatArray:
    """Slab test against an axis-aligned box, first positive entry parameter."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t_a = (lower - origin) * inv
        t_b = (upper - origin) * inv
    t_a = np.where(np.isnan(t_a), -np.inf, t_a)
    t_b = np.where(np.isnan(t_b), np.inf, t_b)
    near = np.max(np.minimum(t_a, t_b), axis=1)
    far = np.min(np.maximum(t_a, t_b), axis=1)
    hit = (far >= near) & (far > 0)
    t = np.where(near > 0, near, far)
    return np.where(hit, t, _NO_HIT)


def intersect_sphere(
    origin: FloatArray, directions: FloatArray, center: FloatArray, radius: float
) -> FloatArray:
    offset = origin - center
    b = directions @ offset
    disc = b * b - (offset @ offset - radius * radius)
    root = np.sqrt(np.maximum(disc, 0.0))
    near, far = -b - root, -b + root
    t = np.where(near > 0, near, far)
    return np.where((disc >= 0) & (t > 0), t, _NO_HIT)


def _building_hits(
    building: Building, base: float, origin: FloatArray, directions: FloatArray
) -> FloatArray:
    center = np.array([building.center[0], building.center[1], 0.0])
    rot = np.eye(3)
    rot[:2, :2] = building.axes
    half = np.array([building.size[0] / 2.0, building.size[1] / 2.0, 0.0])
    lower = -half + [0.0, 0.0, base]
    upper = half + [0.0, 0.0, base + building.height]
    return intersect_box(rot @ (origin - center), directions @ rot.T, lower, upper)


def cast_rays(
    scene: SyntheticScene, origin: FloatArray, directions: FloatArray
) -> tuple[FloatArray, np.ndarray]:
    """
    First hit of every ray.

    Args:
        scene (SyntheticScene): World to intersect
        origin (FloatArray): Ray origin in the scene frame, shape (3,)
        directions (FloatArray): Unit directions in the scene frame, shape (N, 3)

    Returns:
        tuple[FloatArray, np.ndarray]: Hit distances (``inf`` for misses) and labels
    """
    origin = np.asarray(origin, dtype=np.float64)
    ground = scene.ground
    normal = ground.normal
    plane_offset = float(ground.height * normal[2])
    distance = intersect_plane(origin, directions, normal, plane_offset)
    labels = np.full(distance.shape, SemanticClass.GROUND, dtype=np.uint8)

    for building in scene.buildings:
        t = _building_hits(building, scene.base_height(building), origin, directions)
        closer = t < distance
        distance = np.where(closer, t, distance)
        labels[closer] = SemanticClass.BUILDING
    for blob in scene.clutter:
        t = intersect_sphere(origin, directions, np.asarray(blob.center), blob.radius)
        closer = t < distance
        distance = np.where(closer, t, distance)
        labels[closer] = blob.label
    return distance, labels


def render_scan(
    scene: SyntheticScene,
    pose: Pose,
    lidar: LidarParams,
    stamp: Stamp = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> LabeledPointCloud:
    """
    Scan the scene from a sensor pose.

    Rays beyond ``lidar.max_range`` are dropped. Range noise is Gaussian
    along the ray; with ``range_noise == 0`` the returned points are the
    exact intersections.

    Args:
        scene (SyntheticScene): World to scan
        pose (Pose): Sensor-to-scene pose
        lidar (LidarParams): Sensor model
        stamp (Stamp): Stamp written into the scan
        rng (Optional[np.random.Generator]): Noise source, seeded from the
            scene when omitted

    Returns:
        LabeledPointCloud: Points in the sensor frame

    Raises:
        SimulationError: If the sensor is below the ground
    """
    origin = pose[:3, 3]
    if origin[2] <= float(scene.ground.height_at(origin[:2])[0]):
        raise SimulationError(f"sensor at {origin.tolist()} is below the ground")
    rng = rng if rng is not None else np.random.default_rng(scene.rng_seed)

    sensor_dirs = lidar.directions()
    distance, labels = cast_rays(scene, origin, sensor_dirs @ pose[:3, :3].T)
    keep = distance <= lidar.max_range
    ranges = distance[keep]
    if lidar.range_noise > 0:
        ranges = ranges + rng.normal(0.0, lidar.range_noise, ranges.shape)
    points = sensor_dirs[keep] * ranges[:, None]
    return LabeledPointCloud(stamp, points, labels[keep])


def _pos_list(parent: etree._Element, ring: FloatArray) -> None:
    polygon = etree.SubElement(parent, f"{{{GML_NS}}}Polygon")
    exterior = etree.SubElement(polygon, f"{{{GML_NS}}}exterior")
    linear = etree.SubElement(exterior, f"{{{GML_NS}}}LinearRing")
    pos_list = etree.SubElement(linear, f"{{{GML_NS}}}posList", srsDimension="3")
    closed = np.vstack([ring, ring[:1]])
    pos_list.text = " ".join(repr(float(v)) for v in closed.ravel())


def _surface(building_el: etree._Element, kind: str, ring: FloatArray) -> None:
    bounded = etree.SubElement(building_el, f"{{{BLDG_NS}}}boundedBy")
    surface = etree.SubElement(bounded, f"{{{BLDG_NS}}}{kind}")
    multi = etree.SubElement(surface, f"{{{BLDG_NS}}}lod2MultiSurface")
    container = etree.SubElement(multi, f"{{{GML_NS}}}MultiSurface")
    member = etree.SubElement(container, f"{{{GML_NS}}}surfaceMember")
    _pos_list(member, ring)


def scene_to_citygml(scene: SyntheticScene) -> bytes:
    """CityGML-subset document, one ground, roof and four walls per building."""
    root = etree.Element(f"{{{CORE_NS}}}CityModel", nsmap=_NSMAP)
    offset = np.array([scene.origin[0], scene.origin[1], 0.0])
    for index, building in enumerate(scene.buildings):
        member = etree.SubElement(root, f"{{{CORE_NS}}}cityObjectMember")
        element = etree.SubElement(member, f"{{{BLDG_NS}}}Building")
        element.set(f"{{{GML_NS}}}id", f"building_{index}")
        corners = building.footprint()
        base, roof = scene.base_height(building), scene.roof_height(building)
        bottom = np.column_stack([corners, np.full(4, base)]) + offset
        top = np.column_stack([corners, np.full(4, roof)]) + offset
        _surface(element, "GroundSurface", bottom[::-1])
        _surface(element, "RoofSurface", top)
        for k in range(4):
            j = (k + 1) % 4
            wall = np.array([bottom[k], bottom[j], top[j], top[k]])
            _surface(element, "WallSurface", wall)
    return bytes(
        etree.tostring(
            root, xml_declaration=True, encoding="UTF-8", pretty_print=True
        )
    )


def scene_to_dem_xyz(scene: SyntheticScene, spacing: float = 1.0) -> str:
    """Ground heights on a regular grid over the extent, one ``E N H`` per line."""
    if spacing <= 0:
        raise SimulationError(f"DEM spacing must be positive, got {spacing}")
    xmin, ymin, xmax, ymax = scene.extent
    xs = xmin + spacing * np.arange(int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1)
    ys = ymin + spacing * np.arange(int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    heights = scene.ground.height_at(xy)
    return "".join(
        f"{x + scene.origin[0]!r} {y + scene.origin[1]!r} {h!r}\n"
        for (x, y), h in zip(xy.tolist(), heights.tolist())
    )


def export_scene(
    scene: SyntheticScene, directory: Path, dem_spacing: float = 1.0
) -> tuple[Path, Path]:
    """Write ``scene.gml`` and ``dem.xyz`` into ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    gml_path, dem_path = directory / "scene.gml", directory / "dem.xyz"
    gml_path.write_bytes(scene_to_citygml(scene))
    dem_path.write_text(scene_to_dem_xyz(scene, dem_spacing), encoding="utf-8")
    logger.info(
        "Exported scene with %d buildings to %s and %s",
        len(scene.buildings),
        gml_path,
        dem_path,
    )
    return gml_path, dem_path


def random_scene(
    seed: int,
    n_buildings: int = 3,
    extent: tuple[float, float, float, float] = (-60.0, -60.0, 60.0, 60.0),
    n_clutter: int = 0,
) -> SyntheticScene:
    """
    Scene with ``n_buildings`` non-overlapping random boxes.

    Raises:
        SimulationError: If the boxes do not fit into the extent
    """
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = extent
    buildings: list[Building] = []
    for _ in range(200 * max(n_buildings, 1)):
        if len(buildings) == n_buildings:
            break
        size = (float(rng.uniform(8.0, 20.0)), float(rng.uniform(8.0, 20.0)))
        margin = math.hypot(*size) / 2.0 + 2.0
        if min(xmax - xmin, ymax - ymin) <= 2.0 * margin:
            continue
        center = (
            float(rng.uniform(xmin + margin, xmax - margin)),
            float(rng.uniform(ymin + margin, ymax - margin)),
        )
        candidate = Building(
            center=center,
            size=size,
            height=float(rng.uniform(6.0, 18.0)),
            yaw=float(rng.uniform(-math.pi / 4, math.pi / 4)),
        )
        if all(
            math.dist(center, other.center)
            > (math.hypot(*size) + math.hypot(*other.size)) / 2.0 + 4.0
            for other in buildings
        ):
            buildings.append(candidate)
    if len(buildings) < n_buildings:
        raise SimulationError(
            f"cannot place {n_buildings} buildings in extent {extent}"
        )

    clutter = tuple(
        Clutter(
            center=(
                float(rng.uniform(xmin, xmax)),
                float(rng.uniform(ymin, ymax)),
                float(rng.uniform(0.5, 3.0)),
            ),
            radius=float(rng.uniform(0.4, 1.5)),
            label=(
                SemanticClass.VEGETATION
                if rng.random() < 0.8
                else SemanticClass.PERSON
            ),
        )
        for _ in range(n_clutter)
    )
    return SyntheticScene(
        buildings=tuple(buildings), clutter=clutter, extent=extent, rng_seed=seed
    )


def open_field_scene(
    seed: int = 0,
    extent: tuple[float, float, float, float] = (-60.0, -60.0, 60.0, 60.0),
) -> SyntheticScene:
    """Flat ground without buildings, where horizontal registration slips."""
    return SyntheticScene(extent=extent, rng_seed=seed)


def parse_scene(data: dict[str, Any]) -> SyntheticScene:
    try:
        return SyntheticScene.model_validate(data)
    except ValidationError as exc:
        raise SimulationError(f"invalid scene description: {exc}") from exc


def load_scene_file(path: Path) -> dict[str, Any]:
    """Raw TOML document of a simulation config."""
    try:
        with path.open("rb") as stream:
            return tomllib.load(stream)
    except FileNotFoundError as exc:
        raise SimulationError(f"scene config {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SimulationError(f"scene config {path} is not valid TOML: {exc}") from exc

