"""
IMU preintegration between two stamps and the spline-consistency residual.

Midpoint integration of bias-corrected samples::

    dR_{k+1} = dR_k Exp(w dt),                w = (g_k + g_{k+1}) / 2 - b_g
    a        = (dR_k (a_k - b_a) + dR_{k+1} (a_{k+1} - b_a)) / 2
    dp_{k+1} = dp_k + dv_k dt + a dt^2 / 2
    dv_{k+1} = dv_k + a dt

The error state is ordered (phi, v, p). Bias Jacobians are the exact
derivatives of this discrete scheme; a changed bias is applied to the deltas
to first order without re-integration.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tools_georef.common.exceptions import PreintegrationError
from tools_georef.common.formats import ImuSample, ImuSeries
from tools_georef.common.lie import (
    hat,
    so3_exp,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import ImuNoise
from tools_georef.common.types import FloatArray, Matrix3, Stamp, Vector3, Vector9

from .spline import AnchorState, SplineTrajectory

logger = setup_logger(__name__)

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class PreintegratedDelta:
    """
    Relative motion summary of an IMU batch.

    Attributes:
        start, end (Stamp): Batch limits (s)
        dt_total (float): Sum of the sample intervals (s)
        delta_R, delta_v, delta_p: Rotation, velocity and position deltas
        covariance (FloatArray): (9, 9) covariance of the (phi, v, p) error
        d_R_bg, d_v_bg, d_v_ba, d_p_bg, d_p_ba (Matrix3): Bias Jacobians
        bias_gyro, bias_accel (Vector3): Bias linearization point
    """

    start: Stamp
    end: Stamp
    dt_total: float
    delta_R: Matrix3
    delta_v: Vector3
    delta_p: Vector3
    covariance: FloatArray
    d_R_bg: Matrix3
    d_v_bg: Matrix3
    d_v_ba: Matrix3
    d_p_bg: Matrix3
    d_p_ba: Matrix3
    bias_gyro: Vector3
    bias_accel: Vector3

    @property
    def bias_jacobians(self) -> dict[str, Matrix3]:
        return {
            "R_bg": self.d_R_bg,
            "v_bg": self.d_v_bg,
            "v_ba": self.d_v_ba,
            "p_bg": self.d_p_bg,
            "p_ba": self.d_p_ba,
        }

    def corrected(
        self, bias_gyro: Vector3, bias_accel: Vector3
    ) -> tuple[Matrix3, Vector3, Vector3]:
        """Deltas re-linearized at another bias."""
        dbg = np.asarray(bias_gyro) - self.bias_gyro
        dba = np.asarray(bias_accel) - self.bias_accel
        return (
            self.delta_R @ so3_exp(self.d_R_bg @ dbg),
            self.delta_v + self.d_v_bg @ dbg + self.d_v_ba @ dba,
            self.delta_p + self.d_p_bg @ dbg + self.d_p_ba @ dba,
        )

    def sqrt_information(self, floor: float = 1e-12) -> FloatArray:
        """Upper factor ``W`` with ``W^T W = covariance^-1``."""
        information = np.linalg.inv(self.covariance + floor * np.eye(9))
        information = 0.5 * (information + information.T)
        return np.linalg.cholesky(information).T


def _as_series(samples: ImuSeries | Sequence[ImuSample]) -> ImuSeries:
    if isinstance(samples, ImuSeries):
        return samples
    try:
        return ImuSeries.from_samples(list(samples))
    except Exception as exc:
        raise PreintegrationError(f"invalid IMU batch: {exc}") from exc


def preintegrate(
    samples: ImuSeries | Sequence[ImuSample],
    bias: tuple[Vector3, Vector3] = (np.zeros(3), np.zeros(3)),
    noise: Optional[ImuNoise] = None,
) -> PreintegratedDelta:
    """
    Preintegrate an IMU batch at the given ``(gyro, accel)`` bias.

    Raises:
        PreintegrationError: Empty batch or non-increasing stamps
    """
    noise = noise or ImuNoise()
    series = _as_series(samples)
    if len(series) == 0:
        raise PreintegrationError("cannot preintegrate an empty IMU batch")
    stamps = series.stamps
    if np.any(np.diff(stamps) <= 0):
        raise PreintegrationError("IMU stamps must be strictly increasing")

    bias_gyro = np.asarray(bias[0], dtype=np.float64)
    bias_accel = np.asarray(bias[1], dtype=np.float64)
    gyro_var = noise.gyro_noise**2
    accel_var = noise.accel_noise**2

    rot = np.eye(3)
    vel = np.zeros(3)
    pos = np.zeros(3)
    cov = np.zeros((9, 9))
    j_r_bg = np.zeros((3, 3))
    j_v_bg = np.zeros((3, 3))
    j_v_ba = np.zeros((3, 3))
    j_p_bg = np.zeros((3, 3))
    j_p_ba = np.zeros((3, 3))

    for k in range(len(series) - 1):
        dt = float(stamps[k + 1] - stamps[k])
        omega = 0.5 * (series.gyro[k] + series.gyro[k + 1]) - bias_gyro
        f_k = series.accel[k] - bias_accel
        f_next = series.accel[k + 1] - bias_accel

        step = so3_exp(omega * dt)
        right = so3_right_jacobian(omega * dt)
        rot_next = rot @ step
        j_r_next = step.T @ j_r_bg - right * dt

        accel = 0.5 * (rot @ f_k + rot_next @ f_next)
        d_accel_bg = -0.5 * (
            rot @ hat(f_k) @ j_r_bg + rot_next @ hat(f_next) @ j_r_next
        )
        d_accel_ba = -0.5 * (rot + rot_next)
        d_accel_phi = -0.5 * (rot @ hat(f_k) + rot_next @ hat(f_next) @ step.T)

        transition = np.eye(9)
        transition[0:3, 0:3] = step.T
        transition[3:6, 0:3] = d_accel_phi * dt
        transition[6:9, 0:3] = 0.5 * d_accel_phi * dt**2
        transition[6:9, 3:6] = np.eye(3) * dt
        gyro_input = np.zeros((9, 3))
        gyro_input[0:3] = -right * dt
        accel_input = np.zeros((9, 3))
        accel_input[3:6] = -d_accel_ba * dt
        accel_input[6:9] = -0.5 * d_accel_ba * dt**2
        cov = (
            transition @ cov @ transition.T
            + (gyro_var / dt) * gyro_input @ gyro_input.T
            + (accel_var / dt) * accel_input @ accel_input.T
        )

        j_p_bg = j_p_bg + j_v_bg * dt + 0.5 * d_accel_bg * dt**2
        j_p_ba = j_p_ba + j_v_ba * dt + 0.5 * d_accel_ba * dt**2
        j_v_bg = j_v_bg + d_accel_bg * dt
        j_v_ba = j_v_ba + d_accel_ba * dt
        j_r_bg = j_r_next

        pos = pos + vel * dt + 0.5 * accel * dt**2
        vel = vel + accel * dt
        rot = rot_next

    return PreintegratedDelta(
        start=float(stamps[0]),
        end=float(stamps[-1]),
        dt_total=float(stamps[-1] - stamps[0]),
        delta_R=rot,
        delta_v=vel,
        delta_p=pos,
        covariance=0.5 * (cov + cov.T),
        d_R_bg=j_r_bg,
        d_v_bg=j_v_bg,
        d_v_ba=j_v_ba,
        d_p_bg=j_p_bg,
        d_p_ba=j_p_ba,
        bias_gyro=bias_gyro,
        bias_accel=bias_accel,
    )


def slice_imu(series: ImuSeries, start: Stamp, end: Stamp) -> ImuSeries:
    """
    Samples in ``[start, end]`` with linearly interpolated samples added at
    both limits.

    Raises:
        PreintegrationError: If the interval is empty or not covered by ``series``
    """
    if not end > start:
        raise PreintegrationError(f"empty IMU interval [{start}, {end}]")
    if len(series) == 0 or start < series.stamps[0] or end > series.stamps[-1]:
        raise PreintegrationError(
            f"IMU stream does not cover [{start}, {end}]",
            details={"start": start, "end": end},
        )
    inner = (series.stamps > start) & (series.stamps < end)
    stamps = np.concatenate([[start], series.stamps[inner], [end]])
    gyro = np.column_stack(
        [np.interp(stamps, series.stamps, series.gyro[:, k]) for k in range(3)]
    )
    accel = np.column_stack(
        [np.interp(stamps, series.stamps, series.accel[:, k]) for k in range(3)]
    )
    return ImuSeries(stamps, gyro, accel)


@dataclass(frozen=True)
class ImuResidual:
    """Residual (phi, v, p) and its Jacobians on knot blocks and the bias block."""

    residual: Vector9
    knot_jacobians: dict[int, FloatArray]
    bias_jacobian: FloatArray


def imu_residual(
    delta: PreintegratedDelta,
    spline: SplineTrajectory,
    t_prev: Stamp,
    t_cur: Stamp,
    anchor: AnchorState,
    gravity: Vector3 = DEFAULT_GRAVITY,
    segment: int = 0,
) -> Vector9:
    """
    Spline motion between ``t_prev`` and ``t_cur`` against the preintegrated delta::

        r_R = Log(dR~^T R_a^T R_b)
        r_v = R_a^T (v_b - v_a - g dt) - dv~
        r_p = R_a^T (p_b - p_a - v_a dt - g dt^2 / 2) - dp~

    ``~`` marks deltas corrected to the bias of ``segment``. Gravity is
    expressed in the spline frame, so the anchor pose does not enter.
    """
    return imu_residual_jacobians(
        delta, spline, t_prev, t_cur, anchor, gravity, segment
    ).residual


def imu_residual_jacobians(
    delta: PreintegratedDelta,
    spline: SplineTrajectory,
    t_prev: Stamp,
    t_cur: Stamp,
    anchor: AnchorState,
    gravity: Vector3 = DEFAULT_GRAVITY,
    segment: int = 0,
) -> ImuResidual:
    gravity = np.asarray(gravity, dtype=np.float64)
    bias_gyro, bias_accel = anchor.bias(segment)
    delta_r, delta_v, delta_p = delta.corrected(bias_gyro, bias_accel)
    interval = t_cur - t_prev

    i_a, pose_a, rot_jac_a = _rotation_and_jacobians(spline, t_prev)
    i_b, pose_b, rot_jac_b = _rotation_and_jacobians(spline, t_cur)
    rot_a, rot_b = pose_a[:3, :3], pose_b[:3, :3]
    p_a, p_b = pose_a[:3, 3], pose_b[:3, 3]
    _, w_a = spline.basis(t_prev)
    _, w_b = spline.basis(t_cur)
    _, wd_a = spline.basis(t_prev, derivative=1)
    _, wd_b = spline.basis(t_cur, derivative=1)
    v_a, _ = spline.evaluate_derivatives(t_prev)
    v_b, _ = spline.evaluate_derivatives(t_cur)

    error_rot = delta_r.T @ rot_a.T @ rot_b
    r_rot = so3_log(error_rot)
    vel_term = v_b - v_a - gravity * interval
    pos_term = p_b - p_a - v_a * interval - 0.5 * gravity * interval**2
    residual = np.concatenate(
        [r_rot, rot_a.T @ vel_term - delta_v, rot_a.T @ pos_term - delta_p]
    )

    jr_inv = so3_right_jacobian_inv(r_rot)
    # Partials with respect to the right rotation perturbations of R_a and R_b.
    d_phi_a = np.zeros((9, 3))
    d_phi_a[0:3] = -jr_inv @ rot_b.T @ rot_a
    d_phi_a[3:6] = hat(rot_a.T @ vel_term)
    d_phi_a[6:9] = hat(rot_a.T @ pos_term)
    d_phi_b = np.zeros((9, 3))
    d_phi_b[0:3] = jr_inv

    knot_jacobians: dict[int, FloatArray] = {}

    def add(k: int, block: FloatArray) -> None:
        knot_jacobians[k] = knot_jacobians.get(k, np.zeros((9, 6))) + block

    for j in range(spline.order):
        block = np.zeros((9, 6))
        block[3:6, 0:3] = -rot_a.T * wd_a[j]
        block[6:9, 0:3] = -rot_a.T * (w_a[j] + wd_a[j] * interval)
        block[:, 3:6] = d_phi_a @ rot_jac_a[j]
        add(i_a + j, block)

        block = np.zeros((9, 6))
        block[3:6, 0:3] = rot_a.T * wd_b[j]
        block[6:9, 0:3] = rot_a.T * w_b[j]
        block[:, 3:6] = d_phi_b @ rot_jac_b[j]
        add(i_b + j, block)

    bias_jacobian = np.zeros((9, 6))
    gyro_step = delta.d_R_bg @ (bias_gyro - delta.bias_gyro)
    bias_jacobian[0:3, 0:3] = (
        -jr_inv @ error_rot.T @ so3_right_jacobian(gyro_step) @ delta.d_R_bg
    )
    bias_jacobian[3:6, 0:3] = -delta.d_v_bg
    bias_jacobian[3:6, 3:6] = -delta.d_v_ba
    bias_jacobian[6:9, 0:3] = -delta.d_p_bg
    bias_jacobian[6:9, 3:6] = -delta.d_p_ba
    return ImuResidual(residual, knot_jacobians, bias_jacobian)


def _rotation_and_jacobians(
    spline: SplineTrajectory, t: Stamp
) -> tuple[int, FloatArray, list[Matrix3]]:
    i, jacobians = spline.rotation_jacobians(t)
    return i, spline.evaluate(t), jacobians
