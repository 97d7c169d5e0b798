from .flight import (
    AttitudeParams,
    Flight,
    FlightPlan,
    GnssParams,
    ImuParams,
    SensorRig,
    SimulationConfig,
    TruthTrajectory,
    drifting_odometry,
    generate_flight,
    load_simulation_config,
    simulate,
    simulation_config,
    truth_trajectory,
    write_flight,
)
from .scene import (
    Building,
    Clutter,
    Ground,
    LidarParams,
    SyntheticScene,
    cast_rays,
    export_scene,
    intersect_box,
    intersect_plane,
    intersect_sphere,
    open_field_scene,
    random_scene,
    render_scan,
    scene_to_citygml,
    scene_to_dem_xyz,
)

__all__ = [
    "AttitudeParams",
    "Flight",
    "FlightPlan",
    "GnssParams",
    "ImuParams",
    "SensorRig",
    "SimulationConfig",
    "TruthTrajectory",
    "drifting_odometry",
    "generate_flight",
    "load_simulation_config",
    "simulate",
    "simulation_config",
    "truth_trajectory",
    "write_flight",
    "Building",
    "Clutter",
    "Ground",
    "LidarParams",
    "SyntheticScene",
    "cast_rays",
    "export_scene",
    "intersect_box",
    "intersect_plane",
    "intersect_sphere",
    "open_field_scene",
    "random_scene",
    "render_scan",
    "scene_to_citygml",
    "scene_to_dem_xyz",
]
