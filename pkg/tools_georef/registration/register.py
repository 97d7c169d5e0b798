"""
Surfel-to-plane registration of one surfel map against another.

The pose maps source coordinates into the target frame and is updated on the
left, ``T <- Exp(delta) T`` with ``delta = (rho, phi)``. Residuals are
``n_t . (T mu_s - mu_t)`` over hard nearest-neighbour associations per level,
robustified with Huber weights and minimized by damped Gauss-Newton.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from tools_georef.common.formats import write_table
from tools_georef.common.lie import se3_exp, transform_points
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import RegistrationParams
from tools_georef.common.types import FloatArray, Matrix3, Pose

from .surfels import SurfelMap

logger = setup_logger(__name__)

_NEIGHBOURS = 8
_DAMPING_FLOOR = 1e-6
_MATCH_COLUMNS = (
    "source_x",
    "source_y",
    "source_z",
    "target_x",
    "target_y",
    "target_z",
    "target_nx",
    "target_ny",
    "target_nz",
    "residual",
)


@dataclass(frozen=True)
class Matches:
    """Associated surfel pairs stacked over all levels."""

    source_means: FloatArray
    target_means: FloatArray
    target_normals: FloatArray

    def __len__(self) -> int:
        return int(self.source_means.shape[0])


@dataclass(frozen=True)
class RegistrationResult:
    """
    Outcome of ``register``.

    ``pose`` maps source into target. Condition numbers are ``inf`` when the
    translation information is rank deficient. ``cost_history`` holds the cost
    before and after every accepted step, both under the same association.
    """

    pose: Pose
    converged: bool
    iterations: int
    final_cost: float
    cond_model_to_local: float
    cond_local_to_model: float
    matched_surfel_count: int
    cost_history: tuple[tuple[float, float], ...] = field(default=())


def associate(
    source: SurfelMap, target: SurfelMap, pose: Pose, normal_agreement: float = 0.7
) -> Matches:
    """
    Match every transformed source surfel to its nearest target surfel.

    A pair is kept when both surfels live on the same level, the target voxel
    is within one voxel (Chebyshev distance of voxel indices) of the voxel
    containing the transformed source mean, and ``|n_s . n_t| >= normal_agreement``.
    """
    rot = pose[:3, :3]
    src_parts: list[FloatArray] = []
    tgt_parts: list[FloatArray] = []
    nrm_parts: list[FloatArray] = []
    for src_level in source:
        tgt_level = target.level(src_level.voxel_size)
        if tgt_level is None or len(src_level) == 0 or len(tgt_level) == 0:
            continue
        moved = transform_points(pose, src_level.means)
        moved_normals = src_level.normals @ rot.T
        k = min(_NEIGHBOURS, len(tgt_level))
        distances, indices = tgt_level.tree.query(
            moved, k=k, distance_upper_bound=2.0 * math.sqrt(3.0) * src_level.voxel_size
        )
        distances = distances.reshape(len(moved), k)
        indices = indices.reshape(len(moved), k)

        found = np.isfinite(distances)
        safe = np.where(found, indices, 0)
        query_keys = tgt_level.voxel_keys(moved)
        chebyshev = np.abs(tgt_level.keys[safe] - query_keys[:, None, :]).max(axis=2)
        agreement = np.abs(
            np.einsum("nkj,nj->nk", tgt_level.normals[safe], moved_normals)
        )
        ok = found & (chebyshev <= 1) & (agreement >= normal_agreement)

        has_match = ok.any(axis=1)
        # Neighbours come sorted by distance, so the first admissible one is nearest.
        first = np.argmax(ok, axis=1)
        chosen = safe[np.arange(len(moved)), first][has_match]
        src_parts.append(src_level.means[has_match])
        tgt_parts.append(tgt_level.means[chosen])
        nrm_parts.append(tgt_level.normals[chosen])

    if not src_parts:
        empty = np.zeros((0, 3))
        return Matches(empty, empty, empty)
    return Matches(
        np.concatenate(src_parts),
        np.concatenate(tgt_parts),
        np.concatenate(nrm_parts),
    )


def _huber(residuals: FloatArray, delta: float) -> tuple[FloatArray, FloatArray]:
    """Per-residual Huber cost and IRLS weight."""
    magnitude = np.abs(residuals)
    quadratic = magnitude <= delta
    cost = np.where(quadratic, 0.5 * residuals**2, delta * (magnitude - 0.5 * delta))
    weight = np.where(quadratic, 1.0, delta / np.maximum(magnitude, 1e-300))
    return cost, weight


def _linearize(
    matches: Matches, pose: Pose, delta: float
) -> tuple[float, FloatArray, FloatArray, FloatArray]:
    moved = transform_points(pose, matches.source_means)
    normals = matches.target_normals
    residuals = np.einsum("ij,ij->i", normals, moved - matches.target_means)
    cost, weight = _huber(residuals, delta)
    jacobian = np.hstack([normals, np.cross(moved, normals)])
    hessian = jacobian.T @ (weight[:, None] * jacobian)
    gradient = jacobian.T @ (weight * residuals)
    return float(cost.sum()), hessian, gradient, residuals


def _point_to_plane(matches: Matches, moved: FloatArray) -> FloatArray:
    return np.einsum(
        "ij,ij->i", matches.target_normals, moved - matches.target_means
    )


def _cost(matches: Matches, pose: Pose, delta: float) -> float:
    moved = transform_points(pose, matches.source_means)
    residuals = _point_to_plane(matches, moved)
    return float(_huber(residuals, delta)[0].sum())


def condition_number(translation_block: Matrix3) -> float:
    """
    Ratio of extreme eigenvalues of a translation information block.

    Returns:
        float: ``>= 1``, or ``inf`` when the smallest eigenvalue is not positive
    """
    eigenvalues = np.linalg.eigvalsh(0.5 * (translation_block + translation_block.T))
    smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    if largest <= 0.0 or smallest <= largest * 1e-15:
        return math.inf
    return max(largest / smallest, 1.0)


def translation_condition(
    source: SurfelMap, target: SurfelMap, pose: Pose, params: RegistrationParams
) -> float:
    """Condition number of the translation information of one matching direction."""
    matches = associate(source, target, pose, params.normal_agreement)
    if len(matches) == 0:
        return math.inf
    _, hessian, _, _ = _linearize(matches, pose, params.huber_delta)
    return condition_number(hessian[:3, :3])


def dump_matches(path: Path, matches: Matches, pose: Pose) -> None:
    """Write matched pairs (source in target frame) as CSV."""
    moved = transform_points(pose, matches.source_means)
    residuals = _point_to_plane(matches, moved)
    rows = np.column_stack(
        [moved, matches.target_means, matches.target_normals, residuals]
    )
    write_table(path, _MATCH_COLUMNS, rows.tolist())


def register(
    source: SurfelMap,
    target: SurfelMap,
    initial: Pose,
    params: Optional[RegistrationParams] = None,
) -> RegistrationResult:
    """
    Align ``source`` to ``target`` starting from ``initial``.

    Iterates Levenberg-damped Gauss-Newton. A step is accepted when it does
    not increase the cost of the current association; associations are
    recomputed after every accepted step. Stops when the update norm drops
    below ``params.update_tolerance`` or after ``params.max_iterations``.

    Args:
        source (SurfelMap): Map to move (e.g. a local map)
        target (SurfelMap): Fixed map (e.g. the model)
        initial (Pose): Initial source-to-target transform
        params (Optional[RegistrationParams]): Solver settings

    Returns:
        RegistrationResult: ``converged`` is ``False`` when fewer than
        ``params.min_matches`` pairs are found or the damped normal equations
        stay singular
    """
    params = params or RegistrationParams()
    pose = np.array(initial, dtype=np.float64)
    damping = params.initial_damping
    history: list[tuple[float, float]] = []
    converged = False
    iterations = 0

    matches = associate(source, target, pose, params.normal_agreement)
    while iterations < params.max_iterations:
        if len(matches) < params.min_matches:
            logger.debug(
                "Registration stopped: %d matches < %d",
                len(matches),
                params.min_matches,
            )
            break
        cost, hessian, gradient, _ = _linearize(matches, pose, params.huber_delta)
        iterations += 1

        damped_diag = np.maximum(np.diag(hessian), _DAMPING_FLOOR)
        step: Optional[FloatArray] = None
        singular = False
        while damping <= params.max_damping:
            try:
                step = np.linalg.solve(
                    hessian + damping * np.diag(damped_diag), -gradient
                )
            except np.linalg.LinAlgError:
                singular = True
                damping *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                singular = True
                damping *= 10.0
                step = None
                continue
            candidate = se3_exp(step) @ pose
            new_cost = _cost(matches, candidate, params.huber_delta)
            if new_cost <= cost:
                pose = candidate
                damping = max(damping * 0.1, 1e-12)
                history.append((cost, new_cost))
                break
            damping *= 10.0
            step = None
        if step is None:
            # No descent direction left within the damping range.
            converged = not singular and bool(np.isfinite(cost))
            if singular:
                logger.warning(
                    "Registration flagged: normal equations singular up to damping %g",
                    params.max_damping,
                )
            break
        matches = associate(source, target, pose, params.normal_agreement)
        if float(np.linalg.norm(step)) < params.update_tolerance:
            converged = True
            break
    else:
        converged = len(matches) >= params.min_matches
        logger.debug("Registration hit the iteration limit (%d)", params.max_iterations)

    if len(matches) < params.min_matches:
        converged = False

    # Re-orthonormalize the accumulated rotation.
    u, _, vt = np.linalg.svd(pose[:3, :3])
    pose[:3, :3] = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt

    final_cost = _cost(matches, pose, params.huber_delta) if len(matches) else math.inf
    if len(matches):
        _, hessian, _, _ = _linearize(matches, pose, params.huber_delta)
        kappa_fwd = condition_number(hessian[:3, :3])
    else:
        kappa_fwd = math.inf
    kappa_bwd = translation_condition(
        target, source.transformed(pose), np.eye(4), params
    )

    if params.debug_dump is not None and len(matches):
        dump_matches(params.debug_dump, matches, pose)

    logger.debug(
        "Registration: converged=%s iterations=%d matches=%d cost=%.6g "
        "kappa=(%.3g, %.3g)",
        converged,
        iterations,
        len(matches),
        final_cost,
        kappa_fwd,
        kappa_bwd,
    )
    return RegistrationResult(
        pose=pose,
        converged=converged,
        iterations=iterations,
        final_cost=final_cost,
        cond_model_to_local=kappa_bwd,
        cond_local_to_model=kappa_fwd,
        matched_surfel_count=len(matches),
        cost_history=tuple(history),
    )
