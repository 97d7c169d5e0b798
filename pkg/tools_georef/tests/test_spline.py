import math

import numpy as np
import pytest

from tools_georef.common.exceptions import FormatError, SplineSupportError
from tools_georef.common.formats import PoseSeries
from tools_georef.common.lie import (
    make_pose,
    matrix_to_quat,
    pose_inverse,
    rot_z,
    se3_log,
    so3_exp,
    so3_log,
)
from tools_georef.trajectory import (
    SplineTrajectory,
    fit_initial_spline,
    read_spline,
    to_tum,
    write_spline,
)
from tools_georef.trajectory.spline import blending_matrix, cumulative_blending_matrix

from .conftest import random_spline

AXIS = np.array([0.2, -0.5, 0.8]) / np.linalg.norm([0.2, -0.5, 0.8])


def _analytic_spline(degree: int, n_knots: int = 10, dt: float = 0.4, t0: float = 1.0):
    """Knots sampled from p(t) = a + b t and R(t) = Exp(w t AXIS) at the knot times."""
    template = SplineTrajectory(
        degree,
        t0,
        dt,
        np.zeros((n_knots, 3)),
        np.tile([0.0, 0.0, 0.0, 1.0], (n_knots, 1)),
    )
    times = template.knot_times()
    a, b, w = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -0.2]), 0.6
    quats = np.array([matrix_to_quat(so3_exp(w * t * AXIS)) for t in times])
    quats /= np.linalg.norm(quats, axis=1)[:, None]
    return SplineTrajectory(degree, t0, dt, a + np.outer(times, b), quats), a, b, w


def test_cubic_blending_matrix():
    expected = (
        np.array(
            [
                [1.0, -3.0, 3.0, -1.0],
                [4.0, 0.0, -6.0, 3.0],
                [1.0, 3.0, 3.0, -3.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        / 6.0
    )
    np.testing.assert_allclose(blending_matrix(4), expected, atol=1e-15)
    np.testing.assert_allclose(
        blending_matrix(2), [[1.0, -1.0], [0.0, 1.0]], atol=1e-15
    )


@pytest.mark.parametrize("order", [2, 3, 4, 5, 6])
def test_basis_partitions_unity(rng, order):
    for u in rng.uniform(0.0, 1.0, size=5):
        weights = blending_matrix(order) @ u ** np.arange(order)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(weights >= -1e-12)
    cumulative = cumulative_blending_matrix(order)
    np.testing.assert_allclose(cumulative[0], np.eye(order)[0], atol=1e-12)


@pytest.mark.parametrize("degree", [2, 3, 5])
def test_linear_motion_and_constant_rate_are_reproduced(rng, degree):
    spline, a, b, w = _analytic_spline(degree)
    for t in rng.uniform(spline.t_min, spline.t_max, size=20):
        pose = spline.evaluate(t)
        np.testing.assert_allclose(pose[:3, 3], a + b * t, atol=1e-10)
        np.testing.assert_allclose(pose[:3, :3], so3_exp(w * t * AXIS), atol=1e-10)
        velocity, omega = spline.evaluate_derivatives(t)
        np.testing.assert_allclose(velocity, b, atol=1e-10)
        np.testing.assert_allclose(omega, w * AXIS, atol=1e-10)


def test_support_is_half_open():
    spline = random_spline(np.random.default_rng(0), n_knots=7, dt=0.5, t0=2.0)
    assert spline.n_segments == 4
    assert spline.t_max == pytest.approx(4.0)
    assert spline.segment(2.0) == (0, 0.0)
    i, u = spline.segment(math.nextafter(4.0, 0.0))
    assert i == 3 and u < 1.0
    for t in (1.999, 4.0, 10.0):
        with pytest.raises(SplineSupportError):
            spline.evaluate(t)


def test_invalid_splines_rejected():
    quats = np.tile([0.0, 0.0, 0.0, 1.0], (4, 1))
    with pytest.raises(SplineSupportError):
        SplineTrajectory(3, 0.0, 0.1, np.zeros((3, 3)), quats[:3])
    with pytest.raises(SplineSupportError):
        SplineTrajectory(0, 0.0, 0.1, np.zeros((4, 3)), quats)
    with pytest.raises(SplineSupportError):
        SplineTrajectory(3, 0.0, 0.0, np.zeros((4, 3)), quats)
    with pytest.raises(SplineSupportError):
        SplineTrajectory(3, 0.0, 0.1, np.zeros((4, 3)), 2.0 * quats)


def _knot_delta(
    spline: SplineTrajectory, knot: int, coordinate: int, eps: float
) -> np.ndarray:
    delta = np.zeros(spline.n_knots * 6)
    delta[knot * 6 + coordinate] = eps
    return delta


@pytest.mark.parametrize("degree", [1, 3, 4])
def test_pose_jacobians_match_finite_differences(rng, degree):
    spline = random_spline(rng, n_knots=9, degree=degree)
    eps = 1e-6
    for t in rng.uniform(spline.t_min, spline.t_max, size=3):
        i, pose, blocks = spline.pose_jacobians(t)
        inverse = pose_inverse(pose)
        for knot in range(spline.n_knots):
            numeric = np.zeros((6, 6))
            for c in range(6):
                plus = spline.retract(_knot_delta(spline, knot, c, eps)).evaluate(t)
                minus = spline.retract(_knot_delta(spline, knot, c, -eps)).evaluate(t)
                change = se3_log(inverse @ plus) - se3_log(inverse @ minus)
                numeric[:, c] = change / (2 * eps)
            active = i <= knot < i + spline.order
            expected = blocks[knot - i] if active else np.zeros((6, 6))
            np.testing.assert_allclose(numeric, expected, atol=1e-6)


def test_derivatives_match_finite_differences(rng):
    spline = random_spline(rng, n_knots=8)
    h = 1e-5
    for t in rng.uniform(spline.t_min + h, spline.t_max - h, size=10):
        velocity, omega = spline.evaluate_derivatives(t)
        before, after = spline.evaluate(t - h), spline.evaluate(t + h)
        travelled = after[:3, 3] - before[:3, 3]
        np.testing.assert_allclose(velocity, travelled / (2 * h), atol=1e-6)
        np.testing.assert_allclose(
            omega, so3_log(before[:3, :3].T @ after[:3, :3]) / (2 * h), atol=1e-6
        )


def test_zero_retraction_keeps_poses(rng):
    spline = random_spline(rng)
    moved = spline.retract(np.zeros(spline.n_knots * 6))
    t = 0.5 * (spline.t_min + spline.t_max)
    np.testing.assert_allclose(moved.evaluate(t), spline.evaluate(t), atol=1e-12)


def test_fit_reproduces_uniform_motion():
    stamps = 10.0 + np.arange(151) / 50.0
    poses = [
        make_pose(rot_z(0.4 * (t - 10.0)), [2.0 * (t - 10.0), 1.0, -0.5 * (t - 10.0)])
        for t in stamps
    ]
    spline = fit_initial_spline(PoseSeries.from_poses(stamps, poses), dt=0.1)

    assert spline.t_min == pytest.approx(10.0)
    assert spline.t_max > stamps[-1]
    for t, pose in zip(stamps[::10], poses[::10]):
        np.testing.assert_allclose(spline.evaluate(float(t)), pose, atol=1e-9)


def test_fit_needs_enough_samples():
    stamps = np.array([0.0, 0.1, 0.2])
    poses = [np.eye(4)] * 3
    with pytest.raises(SplineSupportError):
        fit_initial_spline(PoseSeries.from_poses(stamps, poses), dt=0.1)


def test_tum_export_is_anchored_and_inside_support(rng):
    spline = random_spline(rng, n_knots=8, dt=0.5)
    anchor = make_pose(rot_z(1.0), [350000.0, 5650000.0, 100.0])
    series = to_tum(spline, rate=10.0, anchor=anchor)
    assert series.stamps[0] == spline.t_min
    assert series.stamps[-1] < spline.t_max
    assert len(series) == 25
    np.testing.assert_allclose(
        series.pose(7), anchor @ spline.evaluate(float(series.stamps[7])), atol=1e-8
    )
    with pytest.raises(SplineSupportError):
        to_tum(spline, rate=0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    spline = random_spline(rng, n_knots=6, degree=2, dt=0.25, t0=1234.5)
    path = tmp_path / "spline.spl"
    write_spline(path, spline)
    loaded = read_spline(path)
    assert path.stat().st_size == 4 + 24 + 56 * spline.n_knots
    assert (loaded.degree, loaded.t0, loaded.dt) == (2, 1234.5, 0.25)
    np.testing.assert_array_equal(loaded.translations, spline.translations)
    np.testing.assert_array_equal(loaded.quats, spline.quats)


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(FormatError, match="not found"):
        read_spline(tmp_path / "missing.spl")
    path = tmp_path / "spline.spl"
    write_spline(path, random_spline(rng))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError, match="expected 8 knots"):
        read_spline(path)
    path.write_bytes(b"SPL0" + bytes(40))
    with pytest.raises(FormatError, match="not an SPL1"):
        read_spline(path)


def _cox_de_boor(j: int, order: int, x: float) -> float:
    """Uniform B-spline basis on integer knots, supported on ``[j, j + order)``."""
    if order == 1:
        return 1.0 if j <= x < j + 1 else 0.0
    rising = (x - j) * _cox_de_boor(j, order - 1, x)
    falling = (j + order - x) * _cox_de_boor(j + 1, order - 1, x)
    return (rising + falling) / (order - 1)


def _reference_pose(spline: SplineTrajectory, t: float) -> np.ndarray:
    x = (t - spline.t0) / spline.dt + spline.order - 1
    weights = np.array(
        [_cox_de_boor(k, spline.order, x) for k in range(spline.n_knots)]
    )
    cumulative = np.cumsum(weights[::-1])[::-1]
    rot = spline.rotation(0)
    for k in range(1, spline.n_knots):
        step = so3_log(spline.rotation(k - 1).T @ spline.rotation(k))
        rot = rot @ so3_exp(cumulative[k] * step)
    return make_pose(rot, weights @ spline.translations)


@pytest.mark.parametrize("degree", [1, 2, 3, 5])
def test_evaluation_matches_global_basis(rng, degree):
    spline = random_spline(rng, n_knots=9, degree=degree)
    for t in rng.uniform(spline.t_min, spline.t_max, size=100):
        np.testing.assert_allclose(
            spline.evaluate(float(t)), _reference_pose(spline, float(t)), atol=1e-10
        )


def _second_derivative(spline: SplineTrajectory, t: float) -> np.ndarray:
    i, weights = spline.basis(t, derivative=2)
    return weights @ spline.translations[i : i + spline.order]


def test_cubic_is_twice_continuous_across_segments(rng):
    spline = random_spline(rng, n_knots=9)
    h = 1e-6
    for k in range(1, spline.n_segments):
        boundary = spline.t0 + k * spline.dt
        before = boundary - 1e-11
        assert spline.segment(before)[0] == k - 1
        assert spline.segment(boundary)[0] == k
        np.testing.assert_allclose(
            spline.evaluate(before), spline.evaluate(boundary), atol=1e-8
        )
        for left, right in zip(
            spline.evaluate_derivatives(before), spline.evaluate_derivatives(boundary)
        ):
            np.testing.assert_allclose(left, right, atol=1e-8)
        np.testing.assert_allclose(
            _second_derivative(spline, before),
            _second_derivative(spline, boundary),
            atol=1e-8,
        )
        _, omega = spline.evaluate_derivatives(boundary)
        _, omega_left = spline.evaluate_derivatives(boundary - h)
        _, omega_right = spline.evaluate_derivatives(boundary + h)
        np.testing.assert_allclose(
            (omega - omega_left) / h, (omega_right - omega) / h, atol=1e-4
        )
