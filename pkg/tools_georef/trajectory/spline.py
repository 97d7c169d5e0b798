"""
Uniform cumulative B-spline trajectory with split translation/rotation knots.

For order ``N = degree + 1`` the segment index of a time ``t`` is
``i = floor((t - t0) / dt)`` with local parameter ``u``; the pose uses knots
``i .. i+N-1``::

    p(t) = sum_j b_j(u) x_{i+j}
    R(t) = R_i prod_{j=1}^{N-1} Exp(lambda_j(u) Log(R_{i+j-1}^T R_{i+j}))

where ``b`` is the uniform B-spline basis and ``lambda`` its cumulative sum.
Poses map the body frame into the (gravity-aligned) odometry frame. Rotation
knots are perturbed on the right, ``R_k <- R_k Exp(delta)``, translation
knots additively; the knot parameter block is ``(delta_p, delta_phi)``.

SPL1 checkpoint (little-endian): ``b"SPL1"``, degree u32, t0 f64, dt f64,
knot count u32, translations K x 3 f64, quaternions K x 4 f64 (x, y, z, w).
"""

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from tools_georef.common.exceptions import FormatError, SplineSupportError
from tools_georef.common.formats import PoseSeries
from tools_georef.common.lie import (
    make_pose,
    matrix_to_quat,
    quat_exp,
    quat_multiply,
    quat_to_matrix,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.types import FloatArray, Matrix3, Pose, Stamp, Vector3, Vector6

logger = setup_logger(__name__)

MAGIC = b"SPL1"
KNOT_DOF = 6

log_se3 = se3_log
exp_se3 = se3_exp


@lru_cache(maxsize=8)
def blending_matrix(order: int) -> FloatArray:
    """
    Uniform B-spline basis matrix ``M`` with ``b(u) = M @ (1, u, ..., u^(N-1))``.

    Row ``s`` belongs to knot ``i + s``.
    """
    n = order
    out = np.zeros((n, n))
    for s in range(n):
        for power in range(n):
            total = sum(
                (-1) ** (m - s) * math.comb(n, m - s) * (n - 1 - m) ** (n - 1 - power)
                for m in range(s, n)
            )
            out[s, power] = math.comb(n - 1, power) * total / math.factorial(n - 1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=8)
def cumulative_blending_matrix(order: int) -> FloatArray:
    """Cumulative basis: row ``j`` is the sum of rows ``j..N-1`` of ``M``."""
    out = np.cumsum(blending_matrix(order)[::-1], axis=0)[::-1].copy()
    out.setflags(write=False)
    return out


def _powers(u: float, order: int, derivative: int = 0) -> FloatArray:
    powers = np.zeros(order)
    for k in range(derivative, order):
        powers[k] = math.perm(k, derivative) * u ** (k - derivative)
    return powers


@dataclass(frozen=True)
class SplineTrajectory:
    """
    Attributes:
        degree (int): Spline degree, order ``N = degree + 1``
        t0 (Stamp): Start of the valid support (s)
        dt (float): Knot spacing (s)
        translations (FloatArray): (K, 3) translation knots (m)
        quats (FloatArray): (K, 4) unit rotation knots (x, y, z, w)
    """

    degree: int
    t0: Stamp
    dt: float
    translations: FloatArray
    quats: FloatArray

    def __post_init__(self) -> None:
        translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        quats = np.asarray(self.quats, dtype=np.float64).reshape(-1, 4)
        if self.degree < 1:
            raise SplineSupportError(f"spline degree must be >= 1, got {self.degree}")
        if not self.dt > 0:
            raise SplineSupportError(f"knot spacing must be > 0, got {self.dt}")
        if translations.shape[0] != quats.shape[0]:
            raise SplineSupportError("translation and rotation knot counts differ")
        if translations.shape[0] < self.order:
            raise SplineSupportError(
                f"a degree {self.degree} spline needs at least {self.order} knots"
            )
        if np.any(np.abs(np.linalg.norm(quats, axis=1) - 1.0) > 1e-12):
            raise SplineSupportError("rotation knots must be unit quaternions")
        object.__setattr__(self, "translations", translations)
        object.__setattr__(self, "quats", quats)

    @property
    def order(self) -> int:
        return self.degree + 1

    @property
    def n_knots(self) -> int:
        return int(self.translations.shape[0])

    @property
    def n_segments(self) -> int:
        return self.n_knots - self.order + 1

    @property
    def t_min(self) -> Stamp:
        return self.t0

    @property
    def t_max(self) -> Stamp:
        """Exclusive end of the support."""
        return self.t0 + self.n_segments * self.dt

    def knot_times(self) -> FloatArray:
        """Time at which each knot has its largest influence."""
        return self.t0 + (np.arange(self.n_knots) - 0.5 * (self.order - 2)) * self.dt

    def rotation(self, k: int) -> Matrix3:
        return quat_to_matrix(self.quats[k])

    def covers(self, t: Stamp) -> bool:
        return self.t_min <= t < self.t_max

    def segment(self, t: Stamp) -> tuple[int, float]:
        """
        Segment index and local parameter ``u`` in [0, 1).

        Raises:
            SplineSupportError: If ``t`` is outside ``[t_min, t_max)``
        """
        if not self.covers(t):
            raise SplineSupportError(
                f"time {t!r} outside spline support [{self.t_min!r}, {self.t_max!r})",
                details={"t": t, "t_min": self.t_min, "t_max": self.t_max},
            )
        s = (t - self.t0) / self.dt
        i = min(int(math.floor(s)), self.n_segments - 1)
        return i, s - i

    def basis(self, t: Stamp, derivative: int = 0) -> tuple[int, FloatArray]:
        """Segment index and blending weights (or their derivative) of active knots."""
        i, u = self.segment(t)
        weights = blending_matrix(self.order) @ _powers(u, self.order, derivative)
        return i, weights / self.dt**derivative

    def _rotation_terms(
        self, t: Stamp
    ) -> tuple[int, Matrix3, FloatArray, FloatArray, FloatArray, list[Matrix3]]:
        i, u = self.segment(t)
        m = cumulative_blending_matrix(self.order)
        lam = m @ _powers(u, self.order)
        lam_dot = m @ _powers(u, self.order, 1) / self.dt
        base = self.rotation(i)
        d = np.zeros((self.order, 3))
        factors: list[Matrix3] = [np.eye(3)]
        previous = base
        for j in range(1, self.order):
            current = self.rotation(i + j)
            d[j] = so3_log(previous.T @ current)
            factors.append(so3_exp(lam[j] * d[j]))
            previous = current
        return i, base, lam, lam_dot, d, factors

    def evaluate(self, t: Stamp) -> Pose:
        i, weights = self.basis(t)
        position = weights @ self.translations[i : i + self.order]
        _, rot, _, _, _, factors = self._rotation_terms(t)
        for factor in factors[1:]:
            rot = rot @ factor
        return make_pose(rot, position)

    def position(self, t: Stamp) -> Vector3:
        i, weights = self.basis(t)
        return weights @ self.translations[i : i + self.order]

    def evaluate_derivatives(self, t: Stamp) -> tuple[Vector3, Vector3]:
        """
        Linear velocity in the odometry frame and angular velocity in the body
        frame.
        """
        i, weights = self.basis(t, derivative=1)
        velocity = weights @ self.translations[i : i + self.order]
        _, _, _, lam_dot, d, factors = self._rotation_terms(t)
        omega = np.zeros(3)
        for j in range(1, self.order):
            omega = factors[j].T @ omega + lam_dot[j] * d[j]
        return velocity, omega

    def rotation_jacobians(self, t: Stamp) -> tuple[int, list[Matrix3]]:
        """
        Jacobians of the right rotation perturbation of ``R(t)`` with respect
        to the right perturbations of the active rotation knots.
        """
        i, _, lam, _, d, factors = self._rotation_terms(t)
        n = self.order
        suffix = [np.eye(3) for _ in range(n)]
        for j in range(n - 2, -1, -1):
            suffix[j] = factors[j + 1] @ suffix[j + 1]
        gains = [np.zeros((3, 3))] + [
            suffix[j].T
            * lam[j]
            @ so3_right_jacobian(lam[j] * d[j])
            @ so3_right_jacobian_inv(d[j])
            for j in range(1, n)
        ]
        jacobians = [suffix[0].T - gains[1] @ so3_exp(d[1]).T]
        for m_ in range(1, n - 1):
            jacobians.append(gains[m_] - gains[m_ + 1] @ so3_exp(d[m_ + 1]).T)
        jacobians.append(gains[n - 1])
        return i, jacobians

    def pose_jacobians(self, t: Stamp) -> tuple[int, Pose, list[FloatArray]]:
        """
        Jacobians of the right SE(3) perturbation ``T(t) Exp(xi)``, ``xi = (rho, phi)``,
        with respect to the 6-dof blocks of the active knots.
        """
        i, weights = self.basis(t)
        pose = self.evaluate(t)
        _, rot_jacobians = self.rotation_jacobians(t)
        rot_t = pose[:3, :3].T
        blocks: list[FloatArray] = []
        for j in range(self.order):
            block = np.zeros((6, KNOT_DOF))
            block[:3, :3] = weights[j] * rot_t
            block[3:, 3:] = rot_jacobians[j]
            blocks.append(block)
        return i, pose, blocks

    def retract(self, delta: FloatArray) -> "SplineTrajectory":
        """Apply a stacked ``(K * 6)`` knot update and re-normalize the quaternions."""
        delta = np.asarray(delta, dtype=np.float64).reshape(self.n_knots, KNOT_DOF)
        quats = np.array(
            [
                quat_multiply(q, quat_exp(step))
                for q, step in zip(self.quats, delta[:, 3:])
            ]
        )
        quats /= np.linalg.norm(quats, axis=1)[:, None]
        return SplineTrajectory(
            self.degree, self.t0, self.dt, self.translations + delta[:, :3], quats
        )

    def sample(self, stamps: FloatArray) -> list[Pose]:
        return [self.evaluate(float(t)) for t in stamps]


def evaluate(spline: SplineTrajectory, t: Stamp) -> Pose:
    return spline.evaluate(t)


def evaluate_derivatives(spline: SplineTrajectory, t: Stamp) -> tuple[Vector3, Vector3]:
    return spline.evaluate_derivatives(t)


@dataclass(frozen=True)
class AnchorState:
    """
    Georeference of the spline and the IMU biases.

    ``gyro_bias`` and ``accel_bias`` hold one row per bias segment.
    """

    pose: Pose = field(default_factory=lambda: np.eye(4))
    gyro_bias: FloatArray = field(default_factory=lambda: np.zeros((1, 3)))
    accel_bias: FloatArray = field(default_factory=lambda: np.zeros((1, 3)))

    def __post_init__(self) -> None:
        gyro = np.asarray(self.gyro_bias, dtype=np.float64).reshape(-1, 3)
        accel = np.asarray(self.accel_bias, dtype=np.float64).reshape(-1, 3)
        if gyro.shape != accel.shape:
            raise SplineSupportError("gyro and accel bias segment counts differ")
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        object.__setattr__(self, "gyro_bias", gyro)
        object.__setattr__(self, "accel_bias", accel)

    @property
    def n_segments(self) -> int:
        return int(self.gyro_bias.shape[0])

    def bias(self, segment: int) -> tuple[Vector3, Vector3]:
        return self.gyro_bias[segment], self.accel_bias[segment]

    @classmethod
    def zero(
        cls, pose: Optional[Pose] = None, n_segments: int = 1
    ) -> "AnchorState":
        return cls(
            np.eye(4) if pose is None else pose,
            np.zeros((n_segments, 3)),
            np.zeros((n_segments, 3)),
        )

    def retract(
        self, anchor_delta: Vector6, bias_delta: FloatArray
    ) -> "AnchorState":
        """``T_a <- T_a Exp(anchor_delta)``; biases add, rows are (gyro, accel)."""
        bias_delta = np.asarray(bias_delta, dtype=np.float64).reshape(
            self.n_segments, 6
        )
        return AnchorState(
            self.pose @ se3_exp(anchor_delta),
            self.gyro_bias + bias_delta[:, :3],
            self.accel_bias + bias_delta[:, 3:],
        )


def _resample(
    series: PoseSeries, times: FloatArray
) -> tuple[FloatArray, list[Matrix3]]:
    """Poses at ``times``, extrapolated linearly/geodesically beyond the series ends."""
    stamps = series.stamps
    inside = np.clip(times, stamps[0], stamps[-1])
    poses = series.interpolate(inside)
    positions = poses[:, :3, 3].copy()
    rotations = [p[:3, :3].copy() for p in poses]
    if len(series) < 2:
        return positions, rotations
    for end, (a, b) in (("head", (0, 1)), ("tail", (-2, -1))):
        span = stamps[b] - stamps[a]
        velocity = (series.positions[b] - series.positions[a]) / span
        rate = so3_log(series.pose(a)[:3, :3].T @ series.pose(b)[:3, :3]) / span
        anchor = a if end == "head" else b
        mask = times < stamps[0] if end == "head" else times > stamps[-1]
        for k in np.flatnonzero(mask):
            shift = times[k] - stamps[anchor]
            positions[k] = series.positions[anchor] + velocity * shift
            rotations[k] = series.pose(anchor)[:3, :3] @ so3_exp(rate * shift)
    return positions, rotations


def fit_initial_spline(
    samples: PoseSeries, dt: float = 0.1, degree: int = 3
) -> SplineTrajectory:
    """
    Spline whose knots are the odometry poses resampled at the knot times.

    The support starts at the first sample and ends just after the last one.

    Raises:
        SplineSupportError: If the samples span less than ``(degree + 1) * dt``
    """
    order = degree + 1
    if len(samples) == 0:
        raise SplineSupportError("cannot fit a spline to an empty trajectory")
    t_first, t_last = float(samples.stamps[0]), float(samples.stamps[-1])
    if t_last - t_first < order * dt:
        raise SplineSupportError(
            f"trajectory spans {t_last - t_first:.3f} s, "
            f"need at least {order * dt:.3f} s"
        )
    n_segments = int(math.floor((t_last - t_first) / dt + 1e-9)) + 1
    n_knots = n_segments + order - 1
    times = t_first + (np.arange(n_knots) - 0.5 * (order - 2)) * dt
    positions, rotations = _resample(samples, times)
    quats = np.array([matrix_to_quat(rot) for rot in rotations])
    quats /= np.linalg.norm(quats, axis=1)[:, None]
    spline = SplineTrajectory(degree, t_first, dt, positions, quats)
    logger.info(
        "Initial spline: degree %d, %d knots, dt %.3f s, support [%.3f, %.3f)",
        degree,
        n_knots,
        dt,
        spline.t_min,
        spline.t_max,
    )
    return spline


def to_tum(
    spline: SplineTrajectory, rate: float, anchor: Optional[Pose] = None
) -> PoseSeries:
    """Anchored poses ``T_a T_X(t)`` sampled at ``rate`` Hz over the support."""
    if not rate > 0:
        raise SplineSupportError(f"export rate must be > 0, got {rate}")
    count = int(math.ceil((spline.t_max - spline.t_min) * rate - 1e-9))
    stamps = spline.t_min + np.arange(count) / rate
    stamps = stamps[stamps < spline.t_max]
    anchor = np.eye(4) if anchor is None else anchor
    return PoseSeries.from_poses(
        stamps, [anchor @ spline.evaluate(float(t)) for t in stamps]
    )


def write_spline(path: Path, spline: SplineTrajectory) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as stream:
        stream.write(MAGIC)
        stream.write(
            struct.pack(
                "<IddI", spline.degree, spline.t0, spline.dt, spline.n_knots
            )
        )
        stream.write(np.ascontiguousarray(spline.translations, dtype="<f8").tobytes())
        stream.write(np.ascontiguousarray(spline.quats, dtype="<f8").tobytes())


def read_spline(path: Path) -> SplineTrajectory:
    """
    Raises:
        FormatError: Missing file, wrong magic or truncated content
    """
    if not path.is_file():
        raise FormatError(f"spline checkpoint not found: {path}")
    data = path.read_bytes()
    header = struct.calcsize("<IddI")
    if data[: len(MAGIC)] != MAGIC or len(data) < len(MAGIC) + header:
        raise FormatError(f"{path}: not an SPL1 spline checkpoint")
    degree, t0, dt, count = struct.unpack_from("<IddI", data, len(MAGIC))
    offset = len(MAGIC) + header
    if len(data) != offset + count * 7 * 8:
        raise FormatError(
            f"{path}: expected {count} knots, file size {len(data)} bytes"
        )
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    translations = values[: 3 * count].reshape(count, 3)
    quats = values[3 * count :].reshape(count, 4)
    return SplineTrajectory(degree, t0, dt, translations, quats)
