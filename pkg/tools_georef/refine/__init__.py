from .initial import (
    InitialPoseSource,
    attitude_matrix,
    initial_pose,
    roll_pitch_from_accel,
)
from .plausibility import (
    RayScores,
    bresenham,
    plausibility,
    ray_score,
    score_rays,
    voxel_filter,
)
from .report import RefinementRecord, read_refinements, write_refinement_report
from .search import (
    Hypothesis,
    RefinementResult,
    grid_refine,
    hypothesis_lattice,
    refine_local_map,
    seed_pose,
    select_best,
)

__all__ = [
    "InitialPoseSource",
    "attitude_matrix",
    "initial_pose",
    "roll_pitch_from_accel",
    "RayScores",
    "bresenham",
    "plausibility",
    "ray_score",
    "score_rays",
    "voxel_filter",
    "RefinementRecord",
    "read_refinements",
    "write_refinement_report",
    "Hypothesis",
    "RefinementResult",
    "grid_refine",
    "hypothesis_lattice",
    "refine_local_map",
    "seed_pose",
    "select_best",
]
