from .cloud import (
    LabeledPointCloud,
    filter_scan,
    iter_scan_directory,
    load_scan_directory,
    read_scan,
    write_scan,
)
from .odometry import ScanToMapOdometry, TumOdometry
from .pipeline import LocalMap, LocalMapAccumulator, accumulate, build_local_map

__all__ = [
    "LabeledPointCloud",
    "filter_scan",
    "iter_scan_directory",
    "load_scan_directory",
    "read_scan",
    "write_scan",
    "ScanToMapOdometry",
    "TumOdometry",
    "LocalMap",
    "LocalMapAccumulator",
    "accumulate",
    "build_local_map",
]
