"""
SO(3) / SE(3) helpers used by registration, the spline and the pose graph.

Conventions:
    - poses are homogeneous 4x4 float64 arrays;
    - SE(3) tangent vectors are ordered (rho, phi): translation part first,
      rotation part second, so ``se3_log`` of a pure rotation of pi/2 about z
      is ``(0, 0, 0, 0, 0, pi/2)``;
    - quaternions are (x, y, z, w), the scipy order.
"""

import math

import numpy as np
from scipy.spatial.transform import Rotation

from .types import FloatArray, Matrix3, Matrix6, Pose, Quaternion, Vector3, Vector6

_EPS_SMALL = 1e-6


def hat(v: Vector3) -> Matrix3:
    """Skew-symmetric matrix such that ``hat(a) @ b == cross(a, b)``."""
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=np.float64
    )


def vee(m: Matrix3) -> Vector3:
    """Inverse of ``hat``."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=np.float64)


def so3_exp(phi: Vector3) -> Matrix3:
    """Rodrigues' formula."""
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < _EPS_SMALL:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * k
        + ((1.0 - math.cos(theta)) / theta**2) * (k @ k)
    )


def so3_log(rot: Matrix3) -> Vector3:
    """Rotation vector of ``rot`` on the principal branch (angle in [0, pi])."""
    w = 0.5 * vee(rot - rot.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (float(np.trace(rot)) - 1.0)
    if s < 1e-9:
        if c > 0.0:
            return w
        return np.asarray(Rotation.from_matrix(rot).as_rotvec(), dtype=np.float64)
    theta = math.atan2(s, c)
    if math.pi - theta < 1e-4:
        return np.asarray(Rotation.from_matrix(rot).as_rotvec(), dtype=np.float64)
    return (theta / s) * w


def so3_left_jacobian(phi: Vector3) -> Matrix3:
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < _EPS_SMALL:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    return (
        np.eye(3)
        + ((1.0 - math.cos(theta)) / theta**2) * k
        + ((theta - math.sin(theta)) / theta**3) * (k @ k)
    )


def so3_left_jacobian_inv(phi: Vector3) -> Matrix3:
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < _EPS_SMALL:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    coeff = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * k + coeff * (k @ k)


def so3_right_jacobian(phi: Vector3) -> Matrix3:
    """``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    return so3_left_jacobian(-np.asarray(phi))


def so3_right_jacobian_inv(phi: Vector3) -> Matrix3:
    return so3_left_jacobian_inv(-np.asarray(phi))


def _se3_q_matrix(rho: Vector3, phi: Vector3) -> Matrix3:
    theta = float(np.linalg.norm(phi))
    rx = hat(rho)
    px = hat(phi)
    if theta < 1e-4:
        t2 = theta * theta
        m2 = 1.0 / 6.0 - t2 / 120.0
        m3 = 1.0 / 24.0 - t2 / 720.0
        m4 = 1.0 / 120.0 - t2 / 2520.0
    else:
        ct = math.cos(theta)
        st = math.sin(theta)
        m2 = (theta - st) / theta**3
        m3 = (0.5 * theta**2 + ct - 1.0) / theta**4
        m4 = (theta - 1.5 * st + 0.5 * theta * ct) / theta**5
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    return (
        0.5 * rx
        + m2 * (pr + rp + prp)
        + m3 * (px @ pr + rp @ px - 3.0 * prp)
        + m4 * (prp @ px + px @ prp)
    )


def se3_exp(xi: Vector6) -> Pose:
    xi = np.asarray(xi, dtype=np.float64)
    pose = np.eye(4)
    pose[:3, :3] = so3_exp(xi[3:])
    pose[:3, 3] = so3_left_jacobian(xi[3:]) @ xi[:3]
    return pose


def se3_log(pose: Pose) -> Vector6:
    phi = so3_log(pose[:3, :3])
    rho = so3_left_jacobian_inv(phi) @ pose[:3, 3]
    return np.concatenate([rho, phi])


def se3_left_jacobian_inv(xi: Vector6) -> Matrix6:
    xi = np.asarray(xi, dtype=np.float64)
    j_inv = so3_left_jacobian_inv(xi[3:])
    q = _se3_q_matrix(xi[:3], xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = j_inv
    out[:3, 3:] = -j_inv @ q @ j_inv
    out[3:, 3:] = j_inv
    return out


def se3_right_jacobian_inv(xi: Vector6) -> Matrix6:
    """``Log(Exp(xi) Exp(e)) ~= xi + Jr^-1(xi) e``."""
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=np.float64))


def adjoint(pose: Pose) -> Matrix6:
    """``T Exp(xi) T^-1 == Exp(Ad(T) xi)`` in (rho, phi) order."""
    rot = pose[:3, :3]
    out = np.zeros((6, 6))
    out[:3, :3] = rot
    out[:3, 3:] = hat(pose[:3, 3]) @ rot
    out[3:, 3:] = rot
    return out


def make_pose(rot: Matrix3, trans: Vector3) -> Pose:
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = trans
    return pose


def pose_inverse(pose: Pose) -> Pose:
    rot_t = pose[:3, :3].T
    return make_pose(rot_t, -rot_t @ pose[:3, 3])


def transform_points(pose: Pose, points: FloatArray) -> FloatArray:
    """Apply ``pose`` to an (N, 3) array."""
    return np.asarray(points, dtype=np.float64) @ pose[:3, :3].T + pose[:3, 3]


def quat_to_matrix(quat: Quaternion) -> Matrix3:
    x, y, z, w = np.asarray(quat, dtype=np.float64) / np.linalg.norm(quat)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: Matrix3) -> Quaternion:
    quat = np.asarray(Rotation.from_matrix(rot).as_quat(), dtype=np.float64)
    return quat if quat[3] >= 0.0 else -quat


def quat_multiply(q1: Quaternion, q2: Quaternion) -> Quaternion:
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_exp(phi: Vector3) -> Quaternion:
    theta = float(np.linalg.norm(phi))
    if theta < _EPS_SMALL:
        quat = np.array([0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2], 1.0])
        return quat / np.linalg.norm(quat)
    axis = np.asarray(phi) / theta
    return np.concatenate([math.sin(0.5 * theta) * axis, [math.cos(0.5 * theta)]])


def pose_from_quat(quat: Quaternion, trans: Vector3) -> Pose:
    return make_pose(quat_to_matrix(quat), np.asarray(trans, dtype=np.float64))


def pose_to_quat(pose: Pose) -> tuple[Vector3, Quaternion]:
    return pose[:3, 3].copy(), matrix_to_quat(pose[:3, :3])


def rot_z(yaw: float) -> Matrix3:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(rot: Matrix3) -> float:
    return math.atan2(rot[1, 0], rot[0, 0])


def is_rigid(pose: Pose, tol: float = 1e-9) -> bool:
    rot = pose[:3, :3]
    return bool(
        np.allclose(rot.T @ rot, np.eye(3), atol=tol)
        and abs(np.linalg.det(rot) - 1.0) < tol
        and np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0])
    )
