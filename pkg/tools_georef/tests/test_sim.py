import math

import numpy as np
import pytest

from tools_georef.common.exceptions import SimulationError
from tools_georef.common.formats import read_gnss_csv, read_tum
from tools_georef.common.lie import make_pose, pose_inverse, rot_z
from tools_georef.common.types import SemanticClass
from tools_georef.geodata import parse_citygml_subset, parse_dem_xyz
from tools_georef.scans import load_scan_directory
from tools_georef.sim import (
    Building,
    Clutter,
    GnssParams,
    LidarParams,
    SensorRig,
    SyntheticScene,
    cast_rays,
    drifting_odometry,
    generate_flight,
    intersect_box,
    intersect_plane,
    intersect_sphere,
    load_simulation_config,
    open_field_scene,
    random_scene,
    render_scan,
    simulate,
    simulation_config,
    truth_trajectory,
)

from .conftest import make_street_scene

STREET_WAYPOINTS = [(-20.0, 0.0, 2.0), (0.0, 0.5, 3.0), (20.0, 0.0, 2.0)]
SMALL_LIDAR = LidarParams(channels=4, azimuth_resolution_deg=10.0)


def test_flat_ground_ranges_are_exact():
    lidar = LidarParams(channels=16, azimuth_resolution_deg=2.0)
    pose = make_pose(rot_z(0.7), [3.0, -2.0, 5.0])
    scan = render_scan(open_field_scene(), pose, lidar)
    assert len(scan.points) > 0
    assert np.all(scan.labels == SemanticClass.GROUND)
    np.testing.assert_allclose(scan.points[:, 2], -5.0, atol=1e-12)
    assert np.linalg.norm(scan.points, axis=1).max() <= lidar.max_range


def test_wall_returns_lie_on_the_face():
    block = Building(center=(20.0, 0.0), size=(10.0, 10.0), height=10.0)
    scene = SyntheticScene(buildings=(block,))
    scan = render_scan(scene, make_pose(np.eye(3), [0.0, 0.0, 2.0]), LidarParams())
    wall = scan.points[scan.labels == SemanticClass.BUILDING]
    assert len(wall) > 20
    np.testing.assert_allclose(wall[:, 0], 15.0, atol=1e-9)
    assert np.all(np.abs(wall[:, 1]) <= 5.0 + 1e-9)
    assert np.all(wall[:, 2] <= 8.0 + 1e-9)


def test_ray_primitives():
    origin = np.zeros(3)
    rays = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(
        intersect_sphere(origin, rays, np.array([10.0, 0.0, 0.0]), 2.0),
        [8.0, np.inf, np.inf],
    )
    np.testing.assert_allclose(
        intersect_plane(origin, rays, np.array([1.0, 0.0, 0.0]), 4.0),
        [4.0, np.inf, np.inf],
    )
    inside = intersect_box(
        origin, rays, np.array([-1.0, -2.0, -1.0]), np.array([3.0, 2.0, 1.0])
    )
    np.testing.assert_allclose(inside, [3.0, 2.0, 1.0])


def test_closest_hit_wins():
    scene = SyntheticScene(
        buildings=(Building(center=(20.0, 0.0), size=(10.0, 10.0), height=10.0),),
        clutter=(Clutter(center=(8.0, 0.0, 2.0), radius=1.0, label="person"),),
    )
    rays = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])
    distance, labels = cast_rays(scene, np.array([0.0, 0.0, 2.0]), rays)
    np.testing.assert_allclose(distance, [7.0, np.inf, 2.0])
    assert labels[0] == SemanticClass.PERSON
    assert labels[2] == SemanticClass.GROUND


def test_sensor_below_ground_rejected():
    with pytest.raises(SimulationError):
        render_scan(
            open_field_scene(), make_pose(np.eye(3), [0.0, 0.0, -1.0]), SMALL_LIDAR
        )


def test_random_scene_is_reproducible():
    first = random_scene(7, n_buildings=4, n_clutter=5)
    second = random_scene(7, 4, n_clutter=5)
    assert first == second
    assert len(first.buildings) == 4 and len(first.clutter) == 5
    assert random_scene(8, n_buildings=4) != first
    with pytest.raises(SimulationError):
        random_scene(0, n_buildings=20, extent=(-15.0, -15.0, 15.0, 15.0))


def test_random_scene_extent_narrower_than_a_building():
    with pytest.raises(SimulationError, match="cannot place"):
        random_scene(3, n_buildings=1, extent=(-5.0, -5.0, 5.0, 5.0))


def test_building_outside_extent_rejected():
    with pytest.raises(ValueError):
        SyntheticScene(
            buildings=(Building(center=(55.0, 0.0), size=(20.0, 10.0), height=5.0),)
        )


@pytest.mark.parametrize(
    "waypoints,duration",
    [
        ([(0.0, 0.0, 2.0)], 10.0),
        ([(0.0, 0.0, 2.0), (0.0, 0.0, 2.0), (5.0, 0.0, 2.0)], 10.0),
        ([(0.0, 0.0, 2.0), (5.0, 0.0, 2.0)], 0.0),
    ],
)
def test_degenerate_waypoints_rejected(waypoints, duration):
    with pytest.raises(SimulationError):
        truth_trajectory(waypoints, duration)


def test_truth_passes_through_waypoints_and_faces_travel():
    truth = truth_trajectory(STREET_WAYPOINTS, 10.0)
    np.testing.assert_allclose(truth.pose(0.0)[:3, 3], STREET_WAYPOINTS[0], atol=1e-12)
    np.testing.assert_allclose(truth.pose(10.0)[:3, 3], STREET_WAYPOINTS[-1], atol=1e-9)
    np.testing.assert_allclose(truth.position(0.0, 1), 0.0, atol=1e-12)
    heading = math.atan2(0.5, 20.0)
    assert float(truth.yaw(0.0)) == pytest.approx(heading)


def _noisy_rig(**gnss) -> SensorRig:
    return SensorRig(
        lidar=LidarParams(channels=4, azimuth_resolution_deg=10.0, range_noise=0.01),
        gnss=GnssParams(**gnss),
    )


def _flight(seed=0, **gnss):
    return generate_flight(
        make_street_scene(),
        STREET_WAYPOINTS,
        _noisy_rig(**gnss),
        duration=2.0,
        scan_rate=5.0,
        seed=seed,
    )


def test_same_seed_gives_identical_flights():
    first, second = _flight(seed=5, noise=0.5), _flight(seed=5, noise=0.5)
    for a, b in zip(first.scans, second.scans):
        np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(first.imu.gyro, second.imu.gyro)
    np.testing.assert_array_equal(first.gnss.positions, second.gnss.positions)

    other = _flight(seed=6, noise=0.5)
    assert not np.array_equal(first.gnss.positions, other.gnss.positions)
    assert not np.array_equal(first.scans[0].points, other.scans[0].points)


def test_flight_stream_sizes():
    flight = _flight()
    assert len(flight.scans) == 11
    assert len(flight.imu) == 401
    assert len(flight.gnss) == 11
    assert len(flight.attitude) == 11
    stamps = [scan.stamp for scan in flight.scans]
    np.testing.assert_allclose(stamps, np.arange(11) / 5.0)
    assert np.all(np.isfinite(flight.attitude.ultrasonic))


def test_gnss_is_truth_plus_origin_plus_offset():
    scene = make_street_scene()
    flight = _flight(offset=(1.0, -2.0, 0.5))
    expected = np.array([*scene.origin, 0.0]) + np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(
        flight.gnss.positions - flight.truth.positions,
        np.tile(expected, (11, 1)),
        atol=1e-6,
    )
    np.testing.assert_allclose(flight.gnss.sigmas, 3.0)


def test_offset_schedule_is_piecewise_constant():
    params = GnssParams(
        offset=(1.0, 0.0, 0.0), offset_schedule=((1.0, (0.0, 0.0, 5.0)),)
    )
    offsets = params.offset_at(np.array([0.0, 0.5, 1.0, 1.5]))
    np.testing.assert_array_equal(
        offsets, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 5.0], [0.0, 0.0, 5.0]]
    )


def test_odometry_without_drift_is_truth_from_first_pose():
    poses = truth_trajectory(STREET_WAYPOINTS, 10.0).poses(np.linspace(0.0, 10.0, 6))
    odometry = drifting_odometry(poses, 0.0)
    for pose, odo in zip(poses, odometry):
        np.testing.assert_allclose(odo, pose_inverse(poses[0]) @ pose, atol=1e-9)


def test_odometry_drift_scales_distance():
    poses = [make_pose(np.eye(3), [float(k), 0.0, 2.0]) for k in range(11)]
    odometry = drifting_odometry(poses, 0.1)
    np.testing.assert_allclose(odometry[-1][:3, 3], [11.0, 0.0, 0.0], atol=1e-12)
    turned = drifting_odometry(poses, 0.0, yaw_drift_deg_per_m=1.0)
    heading = math.atan2(turned[-1][1, 0], turned[-1][0, 0])
    assert math.degrees(heading) == pytest.approx(10.0)


def _config_document(**flight):
    return {
        "scene": {"random_buildings": 2, "rng_seed": 4},
        "rig": {"lidar": {"channels": 4, "azimuth_resolution_deg": 10.0}},
        "flight": {"waypoints": [[-50.0, -55.0, 30.0], [50.0, -55.0, 30.0]], **flight},
    }


def test_config_draws_random_scene():
    config = simulation_config(_config_document(duration=4.0))
    assert len(config.scene.buildings) == 2
    assert config.scene.rng_seed == 4
    assert config.rig.lidar.channels == 4
    assert config.flight.duration == 4.0


def test_config_rejects_waypoints_outside_scene():
    document = _config_document()
    document["flight"]["waypoints"] = [[0.0, 0.0, 30.0], [90.0, 0.0, 30.0]]
    with pytest.raises(SimulationError, match="outside"):
        simulation_config(document)


def test_config_file_errors(tmp_path):
    with pytest.raises(SimulationError, match="not found"):
        load_simulation_config(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[scene\n")
    with pytest.raises(SimulationError, match="TOML"):
        load_simulation_config(broken)


def test_simulated_files_parse(tmp_path):
    config_path = tmp_path / "scene.toml"
    config_path.write_text(
        "[scene]\n"
        "extent = [-30.0, -30.0, 30.0, 30.0]\n"
        "[[scene.buildings]]\n"
        "center = [0.0, 15.0]\n"
        "size = [20.0, 8.0]\n"
        "height = 6.0\n"
        "[rig.lidar]\n"
        "channels = 4\n"
        "azimuth_resolution_deg = 10.0\n"
        "[rig.gnss]\n"
        "offset = [2.0, 0.0, 0.0]\n"
        "[flight]\n"
        "waypoints = [[-10.0, 0.0, 2.0], [10.0, 0.0, 2.0]]\n"
        "duration = 1.0\n"
        "scan_rate = 4.0\n"
    )
    config = load_simulation_config(config_path)
    out = tmp_path / "flight"
    paths = simulate(config, out, header=["# simulated"])

    mesh = parse_citygml_subset(paths["citygml"].read_bytes())
    assert mesh.n_triangles == 12
    np.testing.assert_allclose(mesh.vertices[:, :2].min(axis=0), [349990.0, 5650011.0])
    dem = parse_dem_xyz(paths["dem"].read_bytes())
    assert dem.n_valid == 61 * 61
    np.testing.assert_allclose(dem.origin, [349970.0, 5649970.0])

    assert len(load_scan_directory(paths["scans"])) == 5
    truth = read_tum(paths["truth"])
    np.testing.assert_allclose(
        truth.positions[0], [349990.0, 5650000.0, 2.0], atol=1e-9
    )
    gnss = read_gnss_csv(paths["gnss"])
    np.testing.assert_allclose(gnss.positions[0], [349992.0, 5650000.0, 2.0], atol=1e-9)
    assert paths["imu"].read_text().splitlines()[0] == "# simulated"
