"""
Pose graph edges and their residuals.

Parameter blocks are addressed by ``BlockKey`` values: ``("knot", k)`` for
spline knot ``k`` (``delta_p``, ``delta_phi``), ``("anchor", 0)`` for the
right perturbation ``T_a <- T_a Exp(xi)`` and ``("bias", s)`` for the
``(gyro, accel)`` bias of segment ``s``. Every SE(3) residual is a tangent
vector in (rho, phi) order.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tools_georef.common.exceptions import GraphError
from tools_georef.common.lie import (
    adjoint,
    hat,
    pose_inverse,
    se3_log,
    se3_right_jacobian_inv,
)
from tools_georef.common.types import EdgeKind, FloatArray, Pose, Stamp, Vector3
from tools_georef.trajectory.imu import (
    DEFAULT_GRAVITY,
    PreintegratedDelta,
    imu_residual_jacobians,
)
from tools_georef.trajectory.spline import AnchorState, SplineTrajectory

BlockKey = tuple[str, int]
ANCHOR: BlockKey = ("anchor", 0)


def knot(k: int) -> BlockKey:
    return ("knot", k)


def bias(segment: int) -> BlockKey:
    return ("bias", segment)


@dataclass(frozen=True)
class Linearization:
    residual: FloatArray
    jacobians: dict[BlockKey, FloatArray]


@dataclass(frozen=True)
class GraphEdge:
    """
    One constraint of the pose graph.

    ``stamps`` holds one stamp for absolute edges, ``(t_k, t_s)`` for
    odometry/relative/IMU edges and is empty for bias edges. ``measurement``
    is a pose, a position, a ``PreintegratedDelta`` or ``None`` (bias edges).
    ``segments`` are the bias segments the edge touches.
    """

    kind: EdgeKind
    stamps: tuple[Stamp, ...]
    measurement: Optional[Pose | Vector3 | PreintegratedDelta]
    covariance: FloatArray
    huber_delta: float = float("inf")
    segments: tuple[int, ...] = ()
    label: str = ""
    sqrt_information: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise GraphError(f"{self.kind.value} edge covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
            raise GraphError(f"{self.kind.value} edge covariance is not symmetric")
        try:
            lower = np.linalg.cholesky(np.linalg.inv(cov))
        except np.linalg.LinAlgError as exc:
            raise GraphError(
                f"{self.kind.value} edge covariance is not positive definite"
            ) from exc
        if not self.huber_delta > 0:
            raise GraphError(f"Huber delta must be > 0, got {self.huber_delta}")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "sqrt_information", lower.T)

    @property
    def dimension(self) -> int:
        return int(self.covariance.shape[0])


def absolute_pose_edge(
    stamp: Stamp,
    pose: Pose,
    covariance: FloatArray,
    huber_delta: float = float("inf"),
) -> GraphEdge:
    return GraphEdge(
        EdgeKind.ABSOLUTE_POSE, (stamp,), np.asarray(pose), covariance, huber_delta
    )


def absolute_position_edge(
    stamp: Stamp,
    position: Vector3,
    covariance: FloatArray,
    huber_delta: float = float("inf"),
) -> GraphEdge:
    return GraphEdge(
        EdgeKind.ABSOLUTE_POSITION,
        (stamp,),
        np.asarray(position),
        covariance,
        huber_delta,
    )


def odometry_edge(
    t_key: Stamp,
    t_scan: Stamp,
    relative: Pose,
    covariance: FloatArray,
    huber_delta: float = float("inf"),
) -> GraphEdge:
    return GraphEdge(
        EdgeKind.ODOMETRY,
        (t_key, t_scan),
        np.asarray(relative),
        covariance,
        huber_delta,
    )


def relative_edge(
    t_0: Stamp,
    t_1: Stamp,
    relative: Pose,
    covariance: FloatArray,
    huber_delta: float = float("inf"),
    label: str = "",
) -> GraphEdge:
    return GraphEdge(
        EdgeKind.RELATIVE,
        (t_0, t_1),
        np.asarray(relative),
        covariance,
        huber_delta,
        label=label,
    )


def imu_edge(
    delta: PreintegratedDelta,
    segment: int,
    huber_delta: float = float("inf"),
) -> GraphEdge:
    return GraphEdge(
        EdgeKind.IMU,
        (delta.start, delta.end),
        delta,
        delta.covariance + 1e-12 * np.eye(9),
        huber_delta,
        segments=(segment,),
    )


def bias_walk_edge(segment: int, covariance: FloatArray) -> GraphEdge:
    """Random walk between the biases of ``segment`` and ``segment + 1``."""
    return GraphEdge(
        EdgeKind.BIAS_WALK, (), None, covariance, segments=(segment, segment + 1)
    )


def bias_prior_edge(segment: int, covariance: FloatArray) -> GraphEdge:
    return GraphEdge(EdgeKind.BIAS_PRIOR, (), None, covariance, segments=(segment,))


def _pose_blocks(
    spline: SplineTrajectory, t: Stamp, left: FloatArray
) -> tuple[Pose, dict[BlockKey, FloatArray]]:
    """``left @ dXi/dknot`` for every knot active at ``t``."""
    i, pose, blocks = spline.pose_jacobians(t)
    return pose, {knot(i + j): left @ block for j, block in enumerate(blocks)}


def _accumulate(
    target: dict[BlockKey, FloatArray], blocks: dict[BlockKey, FloatArray]
) -> dict[BlockKey, FloatArray]:
    for key, block in blocks.items():
        target[key] = target[key] + block if key in target else block
    return target


def residual_absolute(
    edge: GraphEdge, spline: SplineTrajectory, anchor: AnchorState
) -> Linearization:
    """``d_a = Log(T_abs^-1 T_a T_X(t))``."""
    (t,) = edge.stamps
    measured = np.asarray(edge.measurement)
    pose_x = spline.evaluate(t)
    residual = se3_log(pose_inverse(measured) @ anchor.pose @ pose_x)
    jr_inv = se3_right_jacobian_inv(residual)
    _, jacobians = _pose_blocks(spline, t, jr_inv)
    jacobians[ANCHOR] = jr_inv @ adjoint(pose_inverse(pose_x))
    return Linearization(residual, jacobians)


def residual_position(
    edge: GraphEdge, spline: SplineTrajectory, anchor: AnchorState
) -> Linearization:
    """``d = T_a p_X(t) - p_abs``."""
    (t,) = edge.stamps
    rot_a = anchor.pose[:3, :3]
    i, weights = spline.basis(t)
    position = weights @ spline.translations[i : i + spline.order]
    residual = rot_a @ position + anchor.pose[:3, 3] - np.asarray(edge.measurement)
    jacobians: dict[BlockKey, FloatArray] = {}
    for j in range(spline.order):
        block = np.zeros((3, 6))
        block[:, :3] = weights[j] * rot_a
        jacobians[knot(i + j)] = block
    anchor_block = np.zeros((3, 6))
    anchor_block[:, :3] = rot_a
    anchor_block[:, 3:] = -rot_a @ hat(position)
    jacobians[ANCHOR] = anchor_block
    return Linearization(residual, jacobians)


def _residual_between(
    edge: GraphEdge, spline: SplineTrajectory
) -> Linearization:
    t_key, t_scan = edge.stamps
    pose_k = spline.evaluate(t_key)
    pose_s = spline.evaluate(t_scan)
    measured = pose_inverse(np.asarray(edge.measurement))
    residual = se3_log(measured @ pose_inverse(pose_k) @ pose_s)
    jr_inv = se3_right_jacobian_inv(residual)
    _, jacobians = _pose_blocks(spline, t_scan, jr_inv)
    _, key_blocks = _pose_blocks(
        spline, t_key, -jr_inv @ adjoint(pose_inverse(pose_s) @ pose_k)
    )
    return Linearization(residual, _accumulate(jacobians, key_blocks))


def residual_odometry(
    edge: GraphEdge, spline: SplineTrajectory, anchor: Optional[AnchorState] = None
) -> Linearization:
    """``d_o = Log(T_o^-1 T_X(t_k)^-1 T_X(t_s))``; the anchor does not enter."""
    return _residual_between(edge, spline)


def residual_relative(
    edge: GraphEdge, spline: SplineTrajectory, anchor: Optional[AnchorState] = None
) -> Linearization:
    """``d_r = Log(T_rel^-1 T_X(t_0)^-1 T_X(t_1))``."""
    return _residual_between(edge, spline)


def residual_imu(
    edge: GraphEdge,
    spline: SplineTrajectory,
    anchor: AnchorState,
    gravity: Vector3 = DEFAULT_GRAVITY,
) -> Linearization:
    if not isinstance(edge.measurement, PreintegratedDelta):
        raise GraphError("IMU edge without a preintegrated delta")
    (segment,) = edge.segments
    t_prev, t_cur = edge.stamps
    result = imu_residual_jacobians(
        edge.measurement, spline, t_prev, t_cur, anchor, gravity, segment
    )
    jacobians = {knot(k): block for k, block in result.knot_jacobians.items()}
    jacobians[bias(segment)] = result.bias_jacobian
    return Linearization(result.residual, jacobians)


def residual_bias(edge: GraphEdge, anchor: AnchorState) -> Linearization:
    if edge.kind is EdgeKind.BIAS_WALK:
        first, second = edge.segments
        residual = np.concatenate(
            [
                anchor.gyro_bias[second] - anchor.gyro_bias[first],
                anchor.accel_bias[second] - anchor.accel_bias[first],
            ]
        )
        return Linearization(
            residual, {bias(first): -np.eye(6), bias(second): np.eye(6)}
        )
    (segment,) = edge.segments
    residual = np.concatenate([anchor.gyro_bias[segment], anchor.accel_bias[segment]])
    return Linearization(residual, {bias(segment): np.eye(6)})


def linearize(
    edge: GraphEdge,
    spline: SplineTrajectory,
    anchor: AnchorState,
    gravity: Vector3 = DEFAULT_GRAVITY,
) -> Linearization:
    """Residual and block Jacobians of any edge kind."""
    match edge.kind:
        case EdgeKind.ABSOLUTE_POSE:
            return residual_absolute(edge, spline, anchor)
        case EdgeKind.ABSOLUTE_POSITION:
            return residual_position(edge, spline, anchor)
        case EdgeKind.ODOMETRY:
            return residual_odometry(edge, spline)
        case EdgeKind.RELATIVE:
            return residual_relative(edge, spline)
        case EdgeKind.IMU:
            return residual_imu(edge, spline, anchor, gravity)
        case EdgeKind.BIAS_WALK | EdgeKind.BIAS_PRIOR:
            return residual_bias(edge, anchor)
    raise GraphError(f"unknown edge kind {edge.kind}")


def huber(squared: float, delta: float) -> tuple[float, float]:
    """
    Robust cost of a squared Mahalanobis norm ``s`` and its IRLS weight.

    ``rho(s) = s`` for ``s <= delta``, ``2 sqrt(delta s) - delta`` beyond;
    the weight is ``rho'(s)``.
    """
    if squared <= delta:
        return squared, 1.0
    root = float(np.sqrt(delta * squared))
    return 2.0 * root - delta, root / squared
