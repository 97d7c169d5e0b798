"""
Grid search around the coarse GNSS pose.

Each lattice offset (and yaw candidate when no magnetometer yaw exists) seeds
one registration of the local map against the model. Converged results are
ranked by plausibility and the best one is accepted when it is both plausible
and well conditioned.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tools_georef.common.exceptions import OutOfModelError, UnscorableError
from tools_georef.common.lie import make_pose, rot_z
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import (
    PlausibilityParams,
    RegistrationParams,
    SearchParams,
)
from tools_georef.common.types import FloatArray, Pose, RejectionReason, Stamp
from tools_georef.model.builder import GeoModel
from tools_georef.registration.register import RegistrationResult, register
from tools_georef.scans.pipeline import LocalMap

from .initial import InitialPoseSource, initial_pose
from .plausibility import plausibility

logger = setup_logger(__name__)


@dataclass(frozen=True)
class Hypothesis:
    """
    One seed of the grid search and its outcome.

    ``score`` is ``None`` when the registration did not converge or the
    registered map could not be scored.
    """

    index: int
    grid_offset: FloatArray
    yaw: float
    registration: Optional[RegistrationResult] = None
    score: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.registration is not None and self.registration.converged

    @property
    def offset_norm(self) -> float:
        return float(np.linalg.norm(self.grid_offset))


@dataclass(frozen=True)
class RefinementResult:
    """Outcome of ``grid_refine`` for one local map."""

    map_id: int
    stamp: Stamp
    accepted: bool
    reason: RejectionReason
    best: Optional[Hypothesis]
    hypotheses: tuple[Hypothesis, ...] = field(default=())

    @property
    def refined_pose(self) -> Optional[Pose]:
        """Registered keyframe pose in the model frame when accepted."""
        if not self.accepted or self.best is None or self.best.registration is None:
            return None
        return self.best.registration.pose


def hypothesis_lattice(params: SearchParams) -> list[tuple[FloatArray, float]]:
    """
    Seeds of the grid search in evaluation order.

    The horizontal lattice spans ``[-radius, radius]`` in both axes with
    spacing ``step``; outermost nodes are clamped onto the radius. Yaw
    candidates are ``-pi + 2 pi k / yaw_steps``, or the single value 0 when
    the yaw search is disabled.
    """
    m = math.ceil(params.radius / params.step - 1e-9)
    ticks = np.clip(
        np.arange(-m, m + 1) * params.step, -params.radius, params.radius
    )
    yaws = (
        [
            -math.pi + 2.0 * math.pi * k / params.yaw_steps
            for k in range(params.yaw_steps)
        ]
        if params.yaw_steps > 0
        else [0.0]
    )
    return [
        (np.array([east, north]), yaw)
        for yaw in yaws
        for north in ticks
        for east in ticks
    ]


def seed_pose(init: Pose, offset: FloatArray, yaw: float) -> Pose:
    """``init`` shifted horizontally and rotated by ``yaw`` about its own position."""
    translation = init[:3, 3] + np.array([offset[0], offset[1], 0.0])
    return make_pose(rot_z(yaw) @ init[:3, :3], translation)


def _evaluate(
    index: int,
    offset: FloatArray,
    yaw: float,
    local_map: LocalMap,
    init: Pose,
    model: GeoModel,
    registration: RegistrationParams,
    params: PlausibilityParams,
) -> Hypothesis:
    result = register(
        local_map.surfels, model.surfels, seed_pose(init, offset, yaw), registration
    )
    score: Optional[float] = None
    if result.converged:
        try:
            score = plausibility(local_map, result.pose, model, params)
        except UnscorableError:
            score = None
    logger.debug(
        "Map %d hypothesis %d offset=(%.1f, %.1f) yaw=%.3f converged=%s s_W=%s "
        "kappa=(%.1f, %.1f)",
        local_map.id,
        index,
        offset[0],
        offset[1],
        yaw,
        result.converged,
        "-" if score is None else f"{score:.4f}",
        result.cond_local_to_model,
        result.cond_model_to_local,
    )
    return Hypothesis(index, offset, yaw, result, score)


def select_best(
    hypotheses: Sequence[Hypothesis], tie_tolerance: float = 1e-6
) -> Optional[Hypothesis]:
    """
    Highest-scoring hypothesis.

    Scores within ``tie_tolerance`` of the maximum are tied; ties go to the
    smallest offset norm, then the smallest absolute yaw, then the lowest
    index, so the choice does not depend on evaluation order.
    """
    scored = [h for h in hypotheses if h.score is not None]
    if not scored:
        return None
    top = max(h.score for h in scored if h.score is not None)
    tied = [h for h in scored if h.score is not None and h.score >= top - tie_tolerance]
    return min(tied, key=lambda h: (h.offset_norm, abs(h.yaw), h.index))


def grid_refine(
    local_map: LocalMap,
    init: Pose,
    model: GeoModel,
    search: Optional[SearchParams] = None,
    params: Optional[PlausibilityParams] = None,
    registration: Optional[RegistrationParams] = None,
) -> RefinementResult:
    """
    Refine the model-frame keyframe pose ``init`` of ``local_map``.

    Returns:
        RefinementResult: Accepted hypothesis or the rejection reason, with
        every evaluated hypothesis for diagnostics
    """
    search = search or SearchParams()
    params = params or PlausibilityParams()
    registration = registration or RegistrationParams()
    seeds = hypothesis_lattice(search)

    def run(item: tuple[int, tuple[FloatArray, float]]) -> Hypothesis:
        index, (offset, yaw) = item
        return _evaluate(
            index, offset, yaw, local_map, init, model, registration, params
        )

    if search.threads > 1:
        with ThreadPoolExecutor(max_workers=search.threads) as pool:
            hypotheses = tuple(pool.map(run, enumerate(seeds)))
    else:
        hypotheses = tuple(map(run, enumerate(seeds)))

    best = select_best(hypotheses, search.tie_tolerance)
    if best is None or best.registration is None or best.score is None:
        reason = RejectionReason.NO_CONVERGENCE
        if any(h.converged for h in hypotheses):
            reason = RejectionReason.UNSCORABLE
        logger.info("Map %d rejected: %s", local_map.id, reason.value)
        return RefinementResult(
            local_map.id, local_map.reference_stamp, False, reason, None, hypotheses
        )

    result = best.registration
    if max(result.cond_local_to_model, result.cond_model_to_local) >= params.tau_kappa:
        reason = RejectionReason.CONDITION_NUMBER
    elif best.score <= params.gamma:
        reason = RejectionReason.SCORE
    else:
        reason = RejectionReason.NONE

    accepted = reason is RejectionReason.NONE
    logger.info(
        "Map %d %s: offset=(%.1f, %.1f) yaw=%.3f s_W=%.4f kappa=(%.1f, %.1f)",
        local_map.id,
        "accepted" if accepted else f"rejected ({reason.value})",
        best.grid_offset[0],
        best.grid_offset[1],
        best.yaw,
        best.score,
        result.cond_local_to_model,
        result.cond_model_to_local,
    )
    return RefinementResult(
        local_map.id, local_map.reference_stamp, accepted, reason, best, hypotheses
    )


def refine_local_map(
    local_map: LocalMap,
    source: InitialPoseSource,
    model: GeoModel,
    search: Optional[SearchParams] = None,
    params: Optional[PlausibilityParams] = None,
    registration: Optional[RegistrationParams] = None,
    altitude_trusted: bool = False,
) -> RefinementResult:
    """
    ``initial_pose`` followed by ``grid_refine``; a GNSS fix outside the model
    yields a rejection instead of an error.
    """
    search = search or SearchParams()
    try:
        init = initial_pose(source, model, altitude_trusted)
    except OutOfModelError:
        return RefinementResult(
            local_map.id,
            local_map.reference_stamp,
            False,
            RejectionReason.OUT_OF_MODEL,
            None,
        )
    if source.needs_yaw_search and search.yaw_steps == 0:
        logger.warning(
            "Map %d has no yaw prior and yaw search is disabled", local_map.id
        )
    return grid_refine(local_map, init, model, search, params, registration)
