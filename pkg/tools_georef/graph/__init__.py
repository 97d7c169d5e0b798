from .anchor import align_yaw_translation, initialize_anchor
from .assembly import (
    OdometryTrack,
    absolute_edges,
    build_pose_graph,
    imu_edges,
    odometry_edges,
)
from .edges import (
    GraphEdge,
    Linearization,
    absolute_pose_edge,
    absolute_position_edge,
    bias_prior_edge,
    bias_walk_edge,
    huber,
    imu_edge,
    linearize,
    odometry_edge,
    relative_edge,
    residual_absolute,
    residual_imu,
    residual_odometry,
    residual_position,
    residual_relative,
)
from .graph_io import (
    dump_graph,
    export_merged_cloud,
    georeferenced_points,
    load_graph,
    write_report,
)
from .loops import candidate_pairs, passes_gate, path_length, propose_loop_closures
from .optimizer import (
    OptimizationReport,
    OptimizationResult,
    PoseGraph,
    normal_equations,
    optimize,
)

__all__ = [
    "align_yaw_translation",
    "initialize_anchor",
    "OdometryTrack",
    "absolute_edges",
    "build_pose_graph",
    "imu_edges",
    "odometry_edges",
    "GraphEdge",
    "Linearization",
    "absolute_pose_edge",
    "absolute_position_edge",
    "bias_prior_edge",
    "bias_walk_edge",
    "huber",
    "imu_edge",
    "linearize",
    "odometry_edge",
    "relative_edge",
    "residual_absolute",
    "residual_imu",
    "residual_odometry",
    "residual_position",
    "residual_relative",
    "dump_graph",
    "export_merged_cloud",
    "georeferenced_points",
    "load_graph",
    "write_report",
    "candidate_pairs",
    "passes_gate",
    "path_length",
    "propose_loop_closures",
    "OptimizationReport",
    "OptimizationResult",
    "PoseGraph",
    "normal_equations",
    "optimize",
]
