from .builder import (
    GeoModel,
    assemble_model,
    interpolate_dem,
    mesh_to_points,
    sample_dem,
    subdivide_mesh,
)
from .cache import load_model, save_model
from .height_map import HeightMap, build_height_map

__all__ = [
    "GeoModel",
    "assemble_model",
    "interpolate_dem",
    "mesh_to_points",
    "sample_dem",
    "subdivide_mesh",
    "load_model",
    "save_model",
    "HeightMap",
    "build_height_map",
]
