import math

import numpy as np
import pytest

from tools_georef.common.lie import (
    adjoint,
    hat,
    is_rigid,
    make_pose,
    matrix_to_quat,
    pose_inverse,
    quat_to_matrix,
    rot_z,
    se3_exp,
    se3_left_jacobian_inv,
    se3_log,
    se3_right_jacobian_inv,
    so3_exp,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
    vee,
    yaw_of,
)


@pytest.fixture
def xi() -> np.ndarray:
    return np.array([0.4, -1.2, 0.7, 0.3, -0.2, 0.5])


def test_hat_is_cross_product():
    a, b = np.array([1.0, 2.0, 3.0]), np.array([-0.5, 0.1, 2.0])
    assert np.allclose(hat(a) @ b, np.cross(a, b))
    assert np.allclose(vee(hat(a)), a)


@pytest.mark.parametrize(
    "phi",
    [
        np.zeros(3),
        np.array([1e-8, 0.0, 0.0]),
        np.array([0.3, -0.4, 0.2]),
        np.array([0.0, 0.0, 3.1]),
    ],
)
def test_so3_log_inverts_exp(phi):
    assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-10)


def test_se3_log_inverts_exp(xi):
    pose = se3_exp(xi)
    assert is_rigid(pose)
    assert np.allclose(se3_log(pose), xi, atol=1e-12)


def test_tangent_order_is_translation_first():
    pose = make_pose(rot_z(math.pi / 2), np.zeros(3))
    assert np.allclose(se3_log(pose), [0, 0, 0, 0, 0, math.pi / 2])


def test_right_jacobian_first_order():
    phi = np.array([0.2, 0.5, -0.3])
    delta = np.array([1e-6, -2e-6, 1.5e-6])
    lhs = so3_exp(phi + delta)
    rhs = so3_exp(phi) @ so3_exp(so3_right_jacobian(phi) @ delta)
    assert np.allclose(lhs, rhs, atol=1e-11)
    assert np.allclose(so3_right_jacobian_inv(phi) @ so3_right_jacobian(phi), np.eye(3))


def test_left_jacobian_first_order():
    phi = np.array([0.2, 0.5, -0.3])
    delta = np.array([1e-6, -2e-6, 1.5e-6])
    lhs = so3_exp(phi + delta)
    rhs = so3_exp(so3_left_jacobian(phi) @ delta) @ so3_exp(phi)
    assert np.allclose(lhs, rhs, atol=1e-11)
    assert np.allclose(so3_left_jacobian_inv(phi) @ so3_left_jacobian(phi), np.eye(3))


def test_se3_left_jacobian_inverse_first_order(xi):
    eps = np.array([1e-6, 2e-6, -1e-6, 5e-7, -1e-6, 2e-6])
    moved = se3_log(se3_exp(eps) @ se3_exp(xi))
    assert np.allclose(moved, xi + se3_left_jacobian_inv(xi) @ eps, atol=1e-10)


def test_se3_right_jacobian_inverse_first_order(xi):
    eps = np.array([1e-6, 2e-6, -1e-6, 5e-7, -1e-6, 2e-6])
    moved = se3_log(se3_exp(xi) @ se3_exp(eps))
    assert np.allclose(moved, xi + se3_right_jacobian_inv(xi) @ eps, atol=1e-10)


def test_adjoint_moves_tangent(xi):
    pose = se3_exp(np.array([1.0, 2.0, -0.5, 0.1, 0.7, -0.3]))
    lhs = pose @ se3_exp(xi) @ pose_inverse(pose)
    assert np.allclose(lhs, se3_exp(adjoint(pose) @ xi), atol=1e-12)


def test_quaternion_round_trip_has_positive_w():
    rot = so3_exp(np.array([0.1, 2.9, -0.3]))
    quat = matrix_to_quat(rot)
    assert quat[3] >= 0.0
    assert np.allclose(quat_to_matrix(quat), rot)


def test_yaw_of_rot_z():
    assert yaw_of(rot_z(-2.5)) == pytest.approx(-2.5)
