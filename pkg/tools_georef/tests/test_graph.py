import math
from types import SimpleNamespace

import numpy as np
import pytest

from tools_georef.common.exceptions import (
    AnchorInitializationError,
    FormatError,
    GraphError,
)
from tools_georef.common.formats import ImuSeries, PoseSeries
from tools_georef.common.lie import make_pose, pose_inverse, rot_z, se3_exp
from tools_georef.common.models import LoopClosureParams, OptimizerOptions
from tools_georef.common.types import EdgeKind, GnssMode, SemanticClass
from tools_georef.graph import (
    GraphEdge,
    OdometryTrack,
    PoseGraph,
    absolute_pose_edge,
    absolute_position_edge,
    align_yaw_translation,
    bias_prior_edge,
    bias_walk_edge,
    build_pose_graph,
    candidate_pairs,
    dump_graph,
    export_merged_cloud,
    georeferenced_points,
    huber,
    imu_edge,
    initialize_anchor,
    linearize,
    load_graph,
    normal_equations,
    odometry_edge,
    optimize,
    passes_gate,
    path_length,
    propose_loop_closures,
    relative_edge,
)
from tools_georef.registration import build_surfel_map
from tools_georef.scans import LabeledPointCloud
from tools_georef.sim import drifting_odometry, truth_trajectory
from tools_georef.trajectory import (
    AnchorState,
    SplineTrajectory,
    fit_initial_spline,
    preintegrate,
)

from .conftest import random_spline

SMALL_POSE_COV = np.diag([0.01] * 3 + [1e-4] * 3)


def _perturb(spline, anchor, key, coordinate, eps):
    kind, index = key
    if kind == "knot":
        delta = np.zeros(spline.n_knots * 6)
        delta[index * 6 + coordinate] = eps
        return spline.retract(delta), anchor
    biases = np.zeros((anchor.n_segments, 6))
    xi = np.zeros(6)
    if kind == "anchor":
        xi[coordinate] = eps
    else:
        biases[index, coordinate] = eps
    return spline, anchor.retract(xi, biases)


def _imu_batch(rng, start: float, n: int = 30) -> ImuSeries:
    stamps = start + np.arange(n) / 100.0
    return ImuSeries(
        stamps,
        rng.normal(scale=0.5, size=(n, 3)),
        rng.normal(scale=2.0, size=(n, 3)) + np.array([0.0, 0.0, 9.81]),
    )


def _edge_zoo(rng, spline, anchor) -> list[GraphEdge]:
    t_a, t_b = 0.6, 1.9
    pose_a, pose_b = spline.evaluate(t_a), spline.evaluate(t_b)
    noisy = se3_exp(0.3 * rng.normal(size=6))
    return [
        absolute_pose_edge(
            t_a, anchor.pose @ pose_a @ noisy, SMALL_POSE_COV, huber_delta=4.0
        ),
        absolute_position_edge(t_b, rng.normal(size=3), np.diag([1.0, 2.0, 3.0])),
        odometry_edge(t_a, t_b, pose_inverse(pose_a) @ pose_b @ noisy, SMALL_POSE_COV),
        relative_edge(
            0.2, 2.3, se3_exp(rng.normal(size=6)), SMALL_POSE_COV, label="0-3"
        ),
        imu_edge(preintegrate(_imu_batch(rng, 0.7)), segment=1, huber_delta=2.0),
        bias_walk_edge(0, np.eye(6) * 1e-4),
        bias_prior_edge(0, np.eye(6) * 0.25),
    ]


@pytest.fixture
def zoo(rng):
    spline = random_spline(rng, n_knots=8, dt=0.5)
    anchor = AnchorState(
        make_pose(rot_z(0.8), [100.0, -50.0, 10.0]),
        rng.normal(scale=0.01, size=(2, 3)),
        rng.normal(scale=0.05, size=(2, 3)),
    )
    return spline, anchor, _edge_zoo(rng, spline, anchor)


def test_edge_jacobians_match_finite_differences(zoo):
    spline, anchor, edges = zoo
    keys = [("knot", k) for k in range(spline.n_knots)]
    keys += [("anchor", 0), ("bias", 0), ("bias", 1)]
    eps = 1e-6
    for edge in edges:
        lin = linearize(edge, spline, anchor)
        for key in keys:
            numeric = np.zeros((edge.dimension, 6))
            for c in range(6):
                up = _perturb(spline, anchor, key, c, eps)
                down = _perturb(spline, anchor, key, c, -eps)
                plus = linearize(edge, *up).residual
                minus = linearize(edge, *down).residual
                numeric[:, c] = (plus - minus) / (2 * eps)
            expected = lin.jacobians.get(key, np.zeros((edge.dimension, 6)))
            np.testing.assert_allclose(
                numeric, expected, atol=1e-6, err_msg=f"{edge.kind.value} {key}"
            )


def test_exact_absolute_pose_has_zero_residual(rng):
    spline = random_spline(rng)
    anchor = AnchorState.zero(make_pose(rot_z(-1.2), [5.0, 6.0, 7.0]))
    edge = absolute_pose_edge(1.0, anchor.pose @ spline.evaluate(1.0), SMALL_POSE_COV)
    np.testing.assert_allclose(linearize(edge, spline, anchor).residual, 0.0, atol=1e-9)


def test_huber_is_continuous_and_downweights():
    assert huber(0.5, 1.0) == (0.5, 1.0)
    cost, weight = huber(1.0, 1.0)
    assert cost == 1.0 and weight == 1.0
    cost, weight = huber(1.0 + 1e-9, 1.0)
    assert cost == pytest.approx(1.0, abs=1e-8)
    cost, weight = huber(16.0, 1.0)
    assert cost == pytest.approx(7.0)
    assert weight == pytest.approx(0.25)
    assert huber(1e6, float("inf")) == (1e6, 1.0)


@pytest.mark.parametrize(
    "covariance,delta",
    [
        (np.ones((3, 2)), 1.0),
        (np.array([[1.0, 0.5], [0.0, 1.0]]), 1.0),
        (np.diag([1.0, -1.0]), 1.0),
        (np.eye(3), 0.0),
    ],
)
def test_invalid_edges_rejected(covariance, delta):
    with pytest.raises(GraphError):
        GraphEdge(EdgeKind.ABSOLUTE_POSITION, (0.0,), np.zeros(3), covariance, delta)


def _consistent_graph(rng):
    truth = random_spline(rng, n_knots=8, dt=0.5)
    truth_anchor = make_pose(rot_z(0.8), [100.0, -50.0, 10.0])
    stamps = np.linspace(0.05, 2.45, 13)
    edges = [
        absolute_pose_edge(
            float(t), truth_anchor @ truth.evaluate(float(t)), SMALL_POSE_COV
        )
        for t in stamps
    ]
    odometry_cov = np.diag([0.0025] * 3 + [1e-4] * 3)
    for t_0, t_1 in zip(stamps[:-1], stamps[1:]):
        relative = pose_inverse(truth.evaluate(float(t_0))) @ truth.evaluate(float(t_1))
        edges.append(odometry_edge(float(t_0), float(t_1), relative, odometry_cov))

    delta = 0.05 * rng.normal(size=(truth.n_knots, 6))
    delta[0] = 0.0
    start = AnchorState.zero(truth_anchor @ se3_exp(0.05 * rng.normal(size=6)))
    graph = PoseGraph(truth.retract(delta.ravel()), start, edges)
    return graph, truth, truth_anchor, stamps


def test_optimizer_recovers_consistent_graph(rng):
    graph, truth, truth_anchor, stamps = _consistent_graph(rng)
    result = optimize(graph)

    report = result.report
    assert report.converged
    assert report.final_cost < 1e-12 < report.initial_cost
    assert report.edge_counts == {"absolute_pose": 13, "odometry": 12}
    assert set(report.final_costs) == {"absolute_pose", "odometry"}
    for t in stamps:
        np.testing.assert_allclose(
            result.anchor.pose @ result.spline.evaluate(float(t)),
            truth_anchor @ truth.evaluate(float(t)),
            atol=1e-6,
        )
    np.testing.assert_array_equal(
        result.spline.translations[0], graph.spline.translations[0]
    )


def test_normal_equations_symmetric_and_thread_independent(rng):
    graph, *_ = _consistent_graph(rng)
    hessian, gradient = normal_equations(graph)
    threaded, threaded_gradient = normal_equations(graph, OptimizerOptions(threads=3))
    dense = hessian.toarray()
    np.testing.assert_allclose(dense, dense.T, atol=1e-9)
    assert np.linalg.eigvalsh(dense).min() > -1e-6
    np.testing.assert_allclose(threaded.toarray(), dense)
    np.testing.assert_allclose(threaded_gradient, gradient)
    assert dense.shape == (8 * 6, 8 * 6)


def test_unconstrained_knots_raise(rng):
    spline = random_spline(rng, n_knots=8, dt=0.5)
    edge = absolute_pose_edge(0.1, spline.evaluate(0.1), SMALL_POSE_COV)
    with pytest.raises(GraphError, match="not constrained"):
        optimize(PoseGraph(spline, AnchorState.zero(), [edge]))


def test_satisfied_graph_needs_no_iterations(rng):
    spline = random_spline(rng, n_knots=4)
    options = OptimizerOptions(fix_first_knot=False)
    edges = [absolute_position_edge(0.2, spline.position(0.2), np.eye(3))]
    result = optimize(PoseGraph(spline, AnchorState.zero(), edges), options)
    assert result.report.termination == "gradient"
    assert result.report.iterations == 0


def test_yaw_translation_alignment_is_exact(rng):
    source = rng.uniform(-50.0, 50.0, size=(10, 3))
    transform = make_pose(rot_z(2.5), [350000.0, 5650000.0, 42.0])
    target = source @ transform[:3, :3].T + transform[:3, 3]
    np.testing.assert_allclose(
        align_yaw_translation(source, target), transform, atol=1e-8
    )


def test_alignment_needs_horizontal_spread():
    points = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 5.0]])
    with pytest.raises(AnchorInitializationError):
        align_yaw_translation(points, points)
    with pytest.raises(AnchorInitializationError):
        align_yaw_translation(points[:1], points[:1])


def test_initialize_anchor_from_spline_positions(rng):
    spline = random_spline(rng)
    transform = make_pose(rot_z(-0.4), [10.0, 20.0, 30.0])
    stamps = np.linspace(spline.t_min, spline.t_max - 0.01, 6)
    refined = np.array(
        [transform[:3, :3] @ spline.position(t) + transform[:3, 3] for t in stamps]
    )
    np.testing.assert_allclose(
        initialize_anchor(stamps, refined, spline), transform, atol=1e-9
    )


def _straight_spline(velocity, n_knots=8, dt=0.5) -> SplineTrajectory:
    times = (np.arange(n_knots) - 1.0) * dt
    quats = np.tile([0.0, 0.0, 0.0, 1.0], (n_knots, 1))
    return SplineTrajectory(3, 0.0, dt, np.outer(times, velocity), quats)


def test_path_length_of_straight_flight():
    spline = _straight_spline(np.array([1.5, -2.0, 0.0]))
    assert path_length(spline, 0.2, 2.2) == pytest.approx(5.0, abs=1e-9)
    assert path_length(spline, 2.2, 0.2) == pytest.approx(5.0, abs=1e-9)


def test_loop_gate():
    assert passes_gate(0.4, 10.0)
    assert not passes_gate(0.6, 10.0)
    assert not passes_gate(0.5, 10.0)
    assert passes_gate(0.9, 10.0, ratio=0.1)


def test_candidate_pairs():
    maps = [SimpleNamespace(id=i) for i in range(4)]
    refined = {
        0: make_pose(np.eye(3), [0.0, 0.0, 0.0]),
        2: make_pose(np.eye(3), [10.0, 0.0, 0.0]),
        3: make_pose(np.eye(3), [40.0, 0.0, 0.0]),
    }
    pairs = candidate_pairs(maps, refined, LoopClosureParams())
    assert pairs == [(0, 1), (0, 2), (1, 2), (2, 3)]
    spatial = LoopClosureParams(include_adjacent=False)
    assert candidate_pairs(maps, refined, spatial) == [(0, 2)]


def _corner_points() -> np.ndarray:
    ticks = 0.05 + 0.1 * np.arange(120)
    gx, gy = np.meshgrid(ticks, ticks)
    ground = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, 0.25)])
    u, v = np.meshgrid(3.05 + 0.1 * np.arange(90), 3.05 + 0.1 * np.arange(50))
    wall_x = np.column_stack([np.full(u.size, 0.75), u.ravel(), v.ravel()])
    wall_y = np.column_stack([u.ravel(), np.full(u.size, 0.75), v.ravel()])
    return np.vstack([ground, wall_x, wall_y])


def _corner_map(map_id, stamp, shift):
    points = _corner_points() - np.array([shift, 0.0, 0.0])
    return SimpleNamespace(
        id=map_id,
        reference_stamp=stamp,
        surfels=build_surfel_map(points, (2.0, 1.0, 0.5)),
    )


@pytest.mark.parametrize("actual_shift,accepted", [(3.0, True), (3.4, False)])
def test_loop_closure_gate_on_registration(actual_shift, accepted):
    spline = _straight_spline(np.array([1.5, 0.0, 0.0]))
    maps = [_corner_map(0, 0.2, 0.0), _corner_map(1, 2.2, actual_shift)]
    params = LoopClosureParams(include_adjacent=True)
    edges = propose_loop_closures(maps, {}, spline, params)
    assert len(edges) == int(accepted)
    if accepted:
        (edge,) = edges
        assert edge.kind is EdgeKind.RELATIVE
        assert edge.stamps == (0.2, 2.2)
        assert edge.label == "0-1"
        np.testing.assert_allclose(edge.measurement[:3, 3], [3.0, 0.0, 0.0], atol=0.1)


def test_graph_dump_round_trip(tmp_path, zoo):
    spline, anchor, edges = zoo
    graph = PoseGraph(spline, anchor, edges, gravity=np.array([0.0, 0.0, -9.80665]))
    path = tmp_path / "graph.txt"
    dump_graph(path, graph, header=["synthetic zoo"])
    loaded = load_graph(path)

    assert path.read_text().startswith("# synthetic zoo\nspline 3 ")
    np.testing.assert_array_equal(loaded.spline.translations, spline.translations)
    np.testing.assert_allclose(loaded.spline.quats, spline.quats, atol=1e-15)
    np.testing.assert_allclose(loaded.anchor.pose, anchor.pose, atol=1e-12)
    np.testing.assert_array_equal(loaded.anchor.gyro_bias, anchor.gyro_bias)
    np.testing.assert_array_equal(loaded.gravity, graph.gravity)
    assert [e.kind for e in loaded.edges] == [e.kind for e in edges]
    assert [e.label for e in loaded.edges] == [e.label for e in edges]
    assert [e.segments for e in loaded.edges] == [e.segments for e in edges]
    for original, restored in zip(edges, loaded.edges):
        np.testing.assert_array_equal(restored.covariance, original.covariance)
        assert restored.huber_delta == original.huber_delta
        np.testing.assert_allclose(
            linearize(restored, loaded.spline, loaded.anchor).residual,
            linearize(original, spline, anchor).residual,
            atol=1e-9,
        )


def test_graph_load_errors(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        load_graph(tmp_path / "missing.txt")
    path = tmp_path / "bad.txt"
    path.write_text("spline 3 0.0 0.5 4\nknot 0 1 2 3\n")
    with pytest.raises(FormatError, match="expected 7 values"):
        load_graph(path)
    path.write_text("vertex 1 2 3\n")
    with pytest.raises(FormatError, match="unknown record"):
        load_graph(path)


def _uniform_track():
    stamps = np.arange(11) / 10.0
    poses = tuple(make_pose(rot_z(0.3 * t), [2.0 * t, 0.5 * t, 0.0]) for t in stamps)
    return OdometryTrack(stamps, poses, np.array([0.0, 0.5]))


def test_build_pose_graph_counts_and_anchor():
    track = _uniform_track()
    spline = fit_initial_spline(
        PoseSeries.from_poses(track.stamps, track.poses), dt=0.1
    )
    transform = make_pose(rot_z(0.7), [350.0, -20.0, 5.0])
    refined = {0.0: transform @ track.poses[0], 0.5: transform @ track.poses[5]}
    imu_stamps = np.linspace(0.0, 1.0, 201)
    imu = ImuSeries(
        imu_stamps, np.zeros((201, 3)), np.tile([0.0, 0.0, 9.81], (201, 1))
    )

    graph = build_pose_graph(spline, track, refined, imu=imu, mode=GnssMode.REFINED)

    assert graph.edge_counts() == {
        "absolute_pose": 2,
        "bias_prior": 1,
        "bias_walk": 1,
        "imu": 10,
        "odometry": 10,
    }
    assert graph.anchor.n_segments == 2
    np.testing.assert_allclose(graph.anchor.pose, transform, atol=1e-9)
    assert track.segment_of(0.49) == 0 and track.segment_of(0.5) == 1
    odometry = [e for e in graph.edges if e.kind is EdgeKind.ODOMETRY]
    assert {e.stamps[0] for e in odometry} == {0.0, 0.5}


def test_export_moves_scans_by_anchored_spline(tmp_path, rng):
    spline = _straight_spline(np.array([1.0, 0.0, 0.0]))
    anchor = make_pose(rot_z(math.pi / 2), [1.0, 2.0, 3.0])
    scan = LabeledPointCloud(
        1.0, rng.normal(size=(5, 3)), np.full(5, SemanticClass.BUILDING, dtype=np.uint8)
    )
    outside = LabeledPointCloud(
        9.0, rng.normal(size=(3, 3)), np.zeros(3, dtype=np.uint8)
    )
    maps = [SimpleNamespace(scans=[scan, outside], reference_stamp=1.0)]

    points = georeferenced_points(maps, spline, anchor)
    world = anchor @ spline.evaluate(1.0)
    expected = world[:3, :3] @ scan.points.T
    np.testing.assert_allclose(points, expected.T + world[:3, 3])

    xyz = tmp_path / "cloud.xyz"
    origin = np.array([350000.0, 5650000.0, 0.0])
    count = export_merged_cloud(maps, spline, anchor, origin, xyz_path=xyz)
    assert count == 5
    rows = np.loadtxt(xyz)
    np.testing.assert_allclose(rows, points + origin, atol=1e-9)


def test_relative_residuals_ignore_anchor(zoo, rng):
    spline, anchor, edges = zoo
    moved = AnchorState(
        make_pose(rot_z(-2.0), rng.normal(scale=100.0, size=3)),
        anchor.gyro_bias,
        anchor.accel_bias,
    )
    for edge in edges:
        before = linearize(edge, spline, anchor).residual
        after = linearize(edge, spline, moved).residual
        if edge.kind in (EdgeKind.ODOMETRY, EdgeKind.RELATIVE):
            np.testing.assert_array_equal(before, after)
        elif edge.kind is EdgeKind.ABSOLUTE_POSE:
            assert np.linalg.norm(before - after) > 1.0


def test_position_residual_rotates_into_anchor_frame():
    quats = np.tile([0.0, 0.0, 0.0, 1.0], (8, 1))
    spline = SplineTrajectory(3, 0.0, 0.5, np.tile([1.0, 0.0, 0.0], (8, 1)), quats)
    anchor = AnchorState.zero(make_pose(rot_z(math.pi / 2), np.zeros(3)))
    matching = absolute_position_edge(0.7, np.array([0.0, 1.0, 0.0]), np.eye(3))
    np.testing.assert_allclose(
        linearize(matching, spline, anchor).residual, 0.0, atol=1e-12
    )
    unrotated = absolute_position_edge(0.7, np.array([1.0, 0.0, 0.0]), np.eye(3))
    np.testing.assert_allclose(
        linearize(unrotated, spline, anchor).residual, [-1.0, 1.0, 0.0], atol=1e-12
    )


def test_first_knot_and_absolute_edges_fix_the_gauge(rng):
    graph, *_ = _consistent_graph(rng)
    fixed = np.linalg.eigvalsh(normal_equations(graph)[0].toarray())
    free_options = OptimizerOptions(fix_first_knot=False)
    free_hessian, _ = normal_equations(graph, free_options)
    free = np.linalg.eigvalsh(free_hessian.toarray())
    assert free.size == fixed.size + 6
    assert fixed.min() > 1e-5
    assert abs(free.min()) < 1e-7


def test_alignment_matches_brute_force_search(rng):
    source = rng.uniform(-20.0, 20.0, size=(20, 3))
    yaw, shift = 0.7, np.array([10.0, 20.0, 3.0])
    target = source @ rot_z(yaw).T + shift + rng.normal(scale=0.05, size=(20, 3))
    pose = align_yaw_translation(source, target)

    yaw_step, shift_step = math.radians(0.05), 0.01
    ticks = shift_step * np.arange(-50, 51)
    best = (math.inf, 0.0, 0.0, 0.0)
    for candidate in yaw + yaw_step * np.arange(-60, 61):
        moved = source[:, :2] @ rot_z(candidate)[:2, :2].T
        rest_x = target[:, 0] - moved[:, 0]
        rest_y = target[:, 1] - moved[:, 1]
        cost_x = ((rest_x[None, :] - (shift[0] + ticks)[:, None]) ** 2).sum(axis=1)
        cost_y = ((rest_y[None, :] - (shift[1] + ticks)[:, None]) ** 2).sum(axis=1)
        ix, iy = int(np.argmin(cost_x)), int(np.argmin(cost_y))
        cost = float(cost_x[ix] + cost_y[iy])
        if cost < best[0]:
            best = (cost, candidate, shift[0] + ticks[ix], shift[1] + ticks[iy])

    _, grid_yaw, grid_x, grid_y = best
    assert math.atan2(pose[1, 0], pose[0, 0]) == pytest.approx(grid_yaw, abs=yaw_step)
    np.testing.assert_allclose(pose[:2, 3], [grid_x, grid_y], atol=shift_step)
    assert pose[2, 3] == pytest.approx(np.mean(target[:, 2] - source[:, 2]))


FIGURE_EIGHT = [
    (0.0, 0.0, 10.0),
    (15.0, 10.0, 10.0),
    (30.0, 0.0, 10.0),
    (15.0, -10.0, 10.0),
    (0.0, 0.0, 10.0),
    (-15.0, 10.0, 10.0),
    (-30.0, 0.0, 10.0),
    (-15.0, -10.0, 10.0),
    (0.0, 0.0, 10.0),
]


def _crossing_gap(spline: SplineTrajectory) -> float:
    """Distance between the first two passes over the figure-eight crossing."""
    return float(np.linalg.norm(spline.position(20.0) - spline.position(0.0)))


def test_figure_eight_loop_closure_removes_drift():
    truth = truth_trajectory(FIGURE_EIGHT, 40.0)
    stamps = np.arange(81) / 2.0
    truth_poses = truth.poses(stamps)
    odometry = drifting_odometry(truth_poses, 0.01, yaw_drift_deg_per_m=0.1)
    keyframes = stamps[::4]

    maps = [
        SimpleNamespace(id=k, reference_stamp=float(t)) for k, t in enumerate(keyframes)
    ]
    odometry_by_map = {k: odometry[4 * k] for k in range(len(keyframes))}
    search = LoopClosureParams(radius=6.0, include_adjacent=False)
    pairs = candidate_pairs(maps, odometry_by_map, search)
    assert {(0, 10), (10, 20), (0, 20)} <= set(pairs)

    loop_cov = np.diag([0.01**2] * 3 + [math.radians(0.1) ** 2] * 3)
    loops = [
        relative_edge(
            float(keyframes[i]),
            float(keyframes[j]),
            pose_inverse(truth_poses[4 * i]) @ truth_poses[4 * j],
            loop_cov,
            label=f"{i}-{j}",
        )
        for i, j in pairs
        if j - i > 1
    ]
    spline = fit_initial_spline(PoseSeries.from_poses(stamps, odometry), dt=1.0)
    track = OdometryTrack(stamps, tuple(odometry), keyframes)
    refined = {float(t): truth.pose(float(t)) for t in keyframes[:2]}
    graph = build_pose_graph(spline, track, refined)
    graph.extend(loops)

    assert _crossing_gap(graph.spline) > 0.5
    result = optimize(graph)
    assert _crossing_gap(result.spline) < 0.1
