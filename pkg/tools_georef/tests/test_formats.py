import math

import numpy as np
import pytest

from tools_georef.common.exceptions import FormatError
from tools_georef.common.formats import (
    AttitudeSeries,
    GnssSeries,
    PoseSeries,
    read_attitude_csv,
    read_gnss_csv,
    read_table,
    read_tum,
    write_attitude_csv,
    write_gnss_csv,
    write_tum,
)
from tools_georef.common.lie import make_pose, rot_z


def _series() -> PoseSeries:
    poses = [make_pose(rot_z(0.1 * k), np.array([k, 2.0 * k, 0.5])) for k in range(4)]
    return PoseSeries.from_poses([0.0, 1.0, 2.0, 3.0], poses)


def test_tum_round_trip_keeps_values(tmp_path):
    series = _series()
    write_tum(tmp_path / "t.tum", series, header=["# provenance"])
    loaded = read_tum(tmp_path / "t.tum")
    assert np.array_equal(loaded.stamps, series.stamps)
    assert np.array_equal(loaded.positions, series.positions)
    assert np.allclose(loaded.quats, series.quats, atol=1e-15)
    assert (tmp_path / "t.tum").read_text().startswith("# provenance\n")


def test_interpolate_midpoint_and_nodes():
    series = _series()
    mid = series.interpolate(1.5)
    assert np.allclose(mid[:3, 3], [1.5, 3.0, 0.5])
    assert np.allclose(mid[:3, :3], rot_z(0.15))
    assert np.allclose(series.interpolate(np.array([2.0]))[0], series.pose(2))


def test_interpolate_outside_raises():
    with pytest.raises(FormatError):
        _series().interpolate(3.5)


def test_non_increasing_stamps_rejected():
    with pytest.raises(FormatError, match="strictly increasing"):
        PoseSeries(
            np.array([0.0, 0.0]), np.zeros((2, 3)), np.tile([0, 0, 0, 1.0], (2, 1))
        )


def test_read_table_reports_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# comment\nstamp,a\n1.0,2.0\n2.0,x\n")
    with pytest.raises(FormatError, match=r"bad.csv:4"):
        read_table(path, ("stamp", "a"))


def test_read_table_missing_file(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        read_table(tmp_path / "missing.csv", ("stamp",))


def test_gnss_round_trip_and_interpolation(tmp_path):
    series = GnssSeries(
        np.array([0.0, 2.0]),
        np.array([[350000.0, 5650000.0, 100.0], [350002.0, 5650004.0, 102.0]]),
        np.full((2, 3), 1.5),
    )
    write_gnss_csv(tmp_path / "gnss.csv", series)
    loaded = read_gnss_csv(tmp_path / "gnss.csv")
    position, sigma = loaded.at(1.0)
    assert np.allclose(position, [350001.0, 5650002.0, 101.0])
    assert np.allclose(sigma, 1.5)


def test_attitude_keeps_missing_ultrasonic(tmp_path):
    series = AttitudeSeries(
        np.array([0.0, 0.1]),
        np.zeros(2),
        np.zeros(2),
        np.array([0.5, 0.6]),
        np.array([2.0, math.nan]),
    )
    write_attitude_csv(tmp_path / "att.csv", series)
    loaded = read_attitude_csv(tmp_path / "att.csv")
    assert loaded.ultrasonic[0] == 2.0
    assert math.isnan(loaded.ultrasonic[1])
    assert loaded.nearest(0.08) == 1
