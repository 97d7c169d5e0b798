import math
from collections import defaultdict

import numpy as np
import pytest

from tools_georef.common.exceptions import RegistrationError
from tools_georef.common.lie import is_rigid, make_pose, pose_inverse, rot_z
from tools_georef.common.models import RegistrationParams
from tools_georef.registration import build_surfel_map, condition_number, register

LEVELS = (2.0, 1.0, 0.5)


def _plane_grid(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gu, gv = np.meshgrid(u, v)
    return gu.ravel(), gv.ravel()


def _ground() -> np.ndarray:
    x, y = _plane_grid(0.05 + 0.1 * np.arange(120), 0.05 + 0.1 * np.arange(120))
    return np.column_stack([x, y, np.full_like(x, 0.25)])


def _wall_x() -> np.ndarray:
    y, z = _plane_grid(3.05 + 0.1 * np.arange(90), 3.05 + 0.1 * np.arange(50))
    return np.column_stack([np.full_like(y, 0.75), y, z])


def _wall_y() -> np.ndarray:
    x, z = _plane_grid(3.05 + 0.1 * np.arange(90), 3.05 + 0.1 * np.arange(50))
    return np.column_stack([x, np.full_like(x, 0.75), z])


@pytest.fixture(scope="module")
def corner_points() -> np.ndarray:
    """Ground and two perpendicular walls, kept apart so no voxel mixes planes."""
    return np.vstack([_ground(), _wall_x(), _wall_y()])


@pytest.fixture(scope="module")
def corner_map(corner_points):
    return build_surfel_map(corner_points, LEVELS)


def test_coplanar_points_give_plane_normal(rng):
    xy = rng.uniform(0.1, 0.9, size=(10, 2))
    points = np.column_stack([xy, np.full(10, 0.3)])
    level = build_surfel_map(points, (1.0,)).levels[0]
    assert len(level) == 1
    np.testing.assert_allclose(level.normals[0], [0.0, 0.0, 1.0], atol=1e-9)
    assert level.eigenvalues[0, 0] < 1e-12


def test_voxels_below_min_points_are_dropped(rng):
    points = rng.uniform(0.1, 0.9, size=(5, 3))
    assert build_surfel_map(points, (1.0, 0.5), min_points=6).n_surfels == 0


def test_surfels_match_brute_force_grouping(rng):
    points = rng.uniform(0.0, 4.0, size=(1000, 3))
    level = build_surfel_map(points, (1.0,)).levels[0]

    groups: dict[tuple[int, ...], list[np.ndarray]] = defaultdict(list)
    for point in points:
        groups[tuple(np.floor(point).astype(int))].append(point)
    expected = {
        key: np.array(group) for key, group in groups.items() if len(group) >= 6
    }

    assert len(level) == len(expected)
    for key, mean, covariance, count in zip(
        level.keys, level.means, level.covariances, level.counts
    ):
        group = expected[tuple(key)]
        assert count == len(group)
        np.testing.assert_allclose(mean, group.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(covariance, np.cov(group, rowvar=False), atol=1e-10)
        assert np.all(np.floor(mean) == key)


def test_surfel_normals_are_unit_smallest_eigenvectors(corner_map):
    assert corner_map.voxel_sizes == LEVELS
    for level in corner_map:
        lengths = np.linalg.norm(level.normals, axis=1)
        np.testing.assert_allclose(lengths, 1.0, atol=1e-12)
        residual = np.einsum("nij,nj->ni", level.covariances, level.normals)
        np.testing.assert_allclose(
            residual, level.eigenvalues[:, :1] * level.normals, atol=1e-9
        )


def test_empty_point_set_rejected():
    with pytest.raises(RegistrationError):
        build_surfel_map(np.zeros((0, 3)))
    with pytest.raises(RegistrationError):
        build_surfel_map(np.zeros((10, 3)), min_points=2)


def test_self_registration_is_identity(corner_map):
    result = register(corner_map, corner_map, np.eye(4))
    assert result.converged
    np.testing.assert_allclose(result.pose, np.eye(4), atol=1e-9)
    assert result.final_cost == pytest.approx(0.0, abs=1e-12)
    assert result.matched_surfel_count == corner_map.n_surfels


def test_recovers_known_shift(corner_points, corner_map):
    shift = np.array([1.2, -0.8, 0.3])
    source = build_surfel_map(corner_points + shift, LEVELS)
    result = register(source, corner_map, np.eye(4))

    assert result.converged
    assert is_rigid(result.pose)
    np.testing.assert_allclose(result.pose[:3, 3], -shift, atol=0.05)
    np.testing.assert_allclose(result.pose[:3, :3], np.eye(3), atol=1e-2)
    assert math.isfinite(result.cond_local_to_model)
    assert math.isfinite(result.cond_model_to_local)
    assert result.cond_local_to_model >= 1.0


def test_cost_never_increases(corner_points, corner_map):
    source = build_surfel_map(corner_points + np.array([0.6, 0.4, -0.2]), LEVELS)
    history = register(source, corner_map, np.eye(4)).cost_history
    assert history
    assert all(after <= before for before, after in history)
    assert history[-1][1] < history[0][0]


def test_single_wall_slips():
    wall = build_surfel_map(_wall_x(), LEVELS)
    result = register(wall, wall, make_pose(np.eye(3), [0.0, 0.2, 0.0]))
    assert max(result.cond_local_to_model, result.cond_model_to_local) > 1e3


def test_rigid_motion_of_both_maps(corner_points, corner_map):
    source = build_surfel_map(corner_points + np.array([0.3, -0.2, 0.1]), LEVELS)
    base = register(source, corner_map, np.eye(4))

    motion = make_pose(rot_z(math.pi / 2), [4.0, -6.0, 2.0])
    moved = register(
        source.transformed(motion),
        corner_map.transformed(motion),
        motion @ pose_inverse(motion),
    )
    expected = motion @ base.pose @ pose_inverse(motion)
    np.testing.assert_allclose(moved.pose[:3, 3], expected[:3, 3], atol=1e-6)
    forward = pytest.approx(base.cond_local_to_model, rel=1e-6)
    assert moved.cond_local_to_model == forward
    backward = pytest.approx(base.cond_model_to_local, rel=1e-6)
    assert moved.cond_model_to_local == backward


def test_too_few_matches_not_converged(rng):
    xy = rng.uniform(0.1, 0.9, size=(10, 2))
    patch = build_surfel_map(np.column_stack([xy, np.full(10, 0.3)]), (1.0,))
    result = register(patch, patch, np.eye(4))
    assert not result.converged
    assert result.matched_surfel_count < RegistrationParams().min_matches


def test_condition_number_cases():
    assert condition_number(np.diag([4.0, 2.0, 1.0])) == pytest.approx(4.0)
    assert condition_number(np.eye(3)) == 1.0
    assert condition_number(np.diag([1.0, 1.0, 0.0])) == math.inf


def test_debug_dump_writes_matches(tmp_path, corner_map):
    dump = tmp_path / "matches.csv"
    register(corner_map, corner_map, np.eye(4), RegistrationParams(debug_dump=dump))
    lines = dump.read_text().splitlines()
    assert lines[0].startswith("source_x,source_y,source_z")
    assert len(lines) == corner_map.n_surfels + 1


def test_singular_normal_equations_are_flagged(
    corner_points, corner_map, monkeypatch
):
    def singular_solve(*_):
        raise np.linalg.LinAlgError("Singular matrix")

    source = build_surfel_map(corner_points + np.array([0.6, 0.4, -0.2]), LEVELS)
    monkeypatch.setattr(np.linalg, "solve", singular_solve)
    result = register(source, corner_map, np.eye(4))
    assert not result.converged
    assert result.iterations == 1
    assert not result.cost_history
