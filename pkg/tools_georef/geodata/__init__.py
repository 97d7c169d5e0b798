from .citygml import parse_citygml_subset
from .dem import DemGrid, grid_from_points, merge_dem_grids, parse_dem_xyz
from .mesh import (
    IngestSummary,
    TriangleMesh,
    merge_meshes,
    parse_mesh,
    read_mesh,
    write_mesh,
)

__all__ = [
    "parse_citygml_subset",
    "DemGrid",
    "grid_from_points",
    "merge_dem_grids",
    "parse_dem_xyz",
    "IngestSummary",
    "TriangleMesh",
    "merge_meshes",
    "parse_mesh",
    "read_mesh",
    "write_mesh",
]
