"""
Relative constraints between spatially neighboring local maps.
"""

import math
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from tools_georef.common.lie import pose_inverse, se3_log
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import EdgeNoise, LoopClosureParams, RegistrationParams
from tools_georef.common.types import Pose, Stamp
from tools_georef.registration.register import register
from tools_georef.scans.pipeline import LocalMap
from tools_georef.trajectory.spline import SplineTrajectory

from .edges import GraphEdge, relative_edge

logger = setup_logger(__name__)


def path_length(spline: SplineTrajectory, t_0: Stamp, t_1: Stamp) -> float:
    """Length of the spline position curve between two stamps."""
    t_0, t_1 = min(t_0, t_1), max(t_0, t_1)
    count = max(2, int(math.ceil((t_1 - t_0) / (0.25 * spline.dt))) + 1)
    positions = np.array(
        [spline.position(float(t)) for t in np.linspace(t_0, t_1, count)]
    )
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))


def passes_gate(translation_error: float, path: float, ratio: float = 0.05) -> bool:
    """Accept a loop whose translation error is below ``ratio`` of the path."""
    return translation_error < ratio * path


def candidate_pairs(
    maps: Sequence[LocalMap],
    refined: Mapping[int, Pose],
    params: LoopClosureParams,
) -> list[tuple[int, int]]:
    """
    Index pairs ``(i, j)``, ``i < j``: time neighbors plus refined poses within
    the radius.
    """
    pairs: set[tuple[int, int]] = set()
    if params.include_adjacent:
        pairs.update((i, i + 1) for i in range(len(maps) - 1))
    for i, j in combinations(range(len(maps)), 2):
        pose_i = refined.get(maps[i].id)
        pose_j = refined.get(maps[j].id)
        if pose_i is None or pose_j is None:
            continue
        if np.linalg.norm(pose_i[:3, 3] - pose_j[:3, 3]) <= params.radius:
            pairs.add((i, j))
    return sorted(pairs)


def propose_loop_closures(
    maps: Sequence[LocalMap],
    refined: Mapping[int, Pose],
    spline: SplineTrajectory,
    params: Optional[LoopClosureParams] = None,
    registration: Optional[RegistrationParams] = None,
    noise: Optional[EdgeNoise] = None,
) -> list[GraphEdge]:
    """
    Register candidate pairs and keep the ones consistent with the trajectory.

    ``refined`` maps local map ids to refined keyframe poses; pairs without
    both poses start from the spline's relative pose. The registered relative
    pose becomes a relative edge when the translational part of its initial
    residual passes the path-length gate.
    """
    params = params or LoopClosureParams()
    registration = registration or RegistrationParams()
    noise = noise or EdgeNoise()
    covariance = np.diag(
        [noise.relative_position**2] * 3
        + [math.radians(noise.relative_rotation_deg) ** 2] * 3
    )

    edges: list[GraphEdge] = []
    for i, j in candidate_pairs(maps, refined, params):
        first, second = maps[i], maps[j]
        t_0, t_1 = first.reference_stamp, second.reference_stamp
        if not (spline.covers(t_0) and spline.covers(t_1)):
            logger.warning(
                "Loop candidate %d-%d outside the spline support", first.id, second.id
            )
            continue
        spline_relative = pose_inverse(spline.evaluate(t_0)) @ spline.evaluate(t_1)
        pose_0, pose_1 = refined.get(first.id), refined.get(second.id)
        initial = (
            pose_inverse(pose_0) @ pose_1
            if pose_0 is not None and pose_1 is not None
            else spline_relative
        )
        result = register(second.surfels, first.surfels, initial, registration)
        if not result.converged:
            logger.warning(
                "Loop candidate %d-%d dropped: registration did not converge",
                first.id,
                second.id,
            )
            continue
        disagreement = se3_log(pose_inverse(result.pose) @ spline_relative)
        error = float(np.linalg.norm(disagreement[:3]))
        path = path_length(spline, t_0, t_1)
        if not passes_gate(error, path, params.gate_ratio):
            logger.warning(
                "Loop candidate %d-%d dropped by gate: %.2f m vs %.2f m path",
                first.id,
                second.id,
                error,
                path,
            )
            continue
        logger.debug(
            "Loop %d-%d accepted: %.2f m over %.2f m path",
            first.id,
            second.id,
            error,
            path,
        )
        edges.append(
            relative_edge(
                t_0,
                t_1,
                result.pose,
                covariance,
                noise.huber_relative,
                label=f"{first.id}-{second.id}",
            )
        )
    logger.info("Loop closures: %d relative edges", len(edges))
    return edges
