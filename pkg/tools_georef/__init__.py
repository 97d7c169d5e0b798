from tools_georef.common.config import Settings, load_settings, settings
from tools_georef.common.exceptions import GeorefError
from tools_georef.common.logger_ import setup_logger
from tools_georef.geodata import (
    DemGrid,
    TriangleMesh,
    parse_citygml_subset,
    parse_dem_xyz,
)
from tools_georef.graph import PoseGraph, build_pose_graph, optimize
from tools_georef.model import GeoModel, assemble_model, load_model, save_model
from tools_georef.refine import grid_refine, plausibility, refine_local_map
from tools_georef.registration import SurfelMap, build_surfel_map, register
from tools_georef.scans import LabeledPointCloud, LocalMap, accumulate, filter_scan
from tools_georef.sim import generate_flight, render_scan
from tools_georef.trajectory import SplineTrajectory, preintegrate

__all__ = [
    "Settings",
    "load_settings",
    "settings",
    "GeorefError",
    "setup_logger",
    "DemGrid",
    "TriangleMesh",
    "parse_citygml_subset",
    "parse_dem_xyz",
    "PoseGraph",
    "build_pose_graph",
    "optimize",
    "GeoModel",
    "assemble_model",
    "load_model",
    "save_model",
    "grid_refine",
    "plausibility",
    "refine_local_map",
    "SurfelMap",
    "build_surfel_map",
    "register",
    "LabeledPointCloud",
    "LocalMap",
    "accumulate",
    "filter_scan",
    "generate_flight",
    "render_scan",
    "SplineTrajectory",
    "preintegrate",
]
