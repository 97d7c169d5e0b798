"""
Readers and writers for the line-oriented text streams exchanged between
commands: TUM trajectories, GNSS fixes, IMU samples and attitude records.

All writers accept optional ``#`` header lines (the settings provenance) and
produce byte-identical output for identical input.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .exceptions import FormatError
from .lie import make_pose, matrix_to_quat, quat_to_matrix
from .logger_ import setup_logger
from .types import FloatArray, Pose, Stamp, Vector3

logger = setup_logger(__name__)

GNSS_COLUMNS = (
    "stamp",
    "easting",
    "northing",
    "height",
    "sigma_e",
    "sigma_n",
    "sigma_h",
)
IMU_COLUMNS = ("stamp", "gx", "gy", "gz", "ax", "ay", "az")
ATTITUDE_COLUMNS = ("stamp", "roll", "pitch", "yaw", "ultrasonic")


def format_float(value: float) -> str:
    """Shortest round-trip text of a float (``repr``), ``nan`` for NaN."""
    return "nan" if math.isnan(value) else repr(float(value))


def read_table(
    path: Path,
    columns: Sequence[str],
    *,
    separator: Optional[str] = ",",
    allow_missing: bool = False,
) -> FloatArray:
    """
    Read a numeric table, skipping ``#`` comments and a leading header row.

    Args:
        path (Path): Text file to read
        columns (Sequence[str]): Expected column names (only the count is enforced)
        separator (Optional[str]): Field separator, ``None`` for whitespace
        allow_missing (bool): Empty fields become NaN instead of an error

    Returns:
        FloatArray: Array of shape (rows, len(columns))

    Raises:
        FormatError: On a wrong field count or a non-numeric token, naming the line
    """
    if not path.is_file():
        raise FormatError(f"File not found: {path}")

    rows: list[list[float]] = []
    header_seen = False
    with path.open("r", encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(separator) if separator else text.split()
            fields = [f.strip() for f in parts]
            if not header_seen and not rows and fields[0] == columns[0]:
                header_seen = True
                continue
            if len(fields) != len(columns):
                raise FormatError(
                    f"{path}:{line_number}: expected {len(columns)} fields, "
                    f"got {len(fields)}",
                    details={"line": line_number},
                )
            row: list[float] = []
            for token in fields:
                if token == "" and allow_missing:
                    row.append(math.nan)
                    continue
                try:
                    row.append(float(token))
                except ValueError as exc:
                    raise FormatError(
                        f"{path}:{line_number}: non-numeric token {token!r}",
                        details={"line": line_number},
                    ) from exc
            rows.append(row)
    if not rows:
        return np.zeros((0, len(columns)))
    return np.asarray(rows, dtype=np.float64)


def write_table(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[float]],
    *,
    separator: str = ",",
    header: Iterable[str] = (),
    column_header: bool = True,
) -> None:
    """Write a numeric table with optional ``#`` provenance lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as stream:
        for line in header:
            stream.write(line if line.startswith("#") else f"# {line}")
            stream.write("\n")
        if column_header:
            stream.write(separator.join(columns) + "\n")
        for row in rows:
            stream.write(separator.join(format_float(v) for v in row) + "\n")


def _require_increasing(stamps: FloatArray, what: str) -> None:
    if stamps.size > 1 and np.any(np.diff(stamps) <= 0):
        bad = int(np.argmax(np.diff(stamps) <= 0)) + 1
        raise FormatError(
            f"{what} stamps must be strictly increasing, "
            f"offending stamp {stamps[bad]!r}",
            details={"index": bad},
        )


@dataclass(frozen=True)
class PoseSeries:
    """
    Time-stamped poses in TUM layout.

    Attributes:
        stamps (FloatArray): (N,) seconds, strictly increasing
        positions (FloatArray): (N, 3) meters
        quats (FloatArray): (N, 4) unit quaternions (x, y, z, w)
    """

    stamps: FloatArray
    positions: FloatArray
    quats: FloatArray

    def __post_init__(self) -> None:
        _require_increasing(self.stamps, "trajectory")

    def __len__(self) -> int:
        return int(self.stamps.size)

    @classmethod
    def from_poses(cls, stamps: Sequence[Stamp], poses: Sequence[Pose]) -> "PoseSeries":
        positions = np.array([p[:3, 3] for p in poses], dtype=np.float64).reshape(-1, 3)
        quats = np.array([matrix_to_quat(p[:3, :3]) for p in poses]).reshape(-1, 4)
        return cls(np.asarray(stamps, dtype=np.float64), positions, quats)

    def pose(self, index: int) -> Pose:
        return make_pose(quat_to_matrix(self.quats[index]), self.positions[index])

    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(len(self))]

    def covers(self, stamp: Stamp) -> bool:
        return bool(len(self) and self.stamps[0] <= stamp <= self.stamps[-1])

    def interpolate(self, stamps: FloatArray | Stamp) -> FloatArray:
        """
        Interpolate poses at arbitrary stamps (linear translation, slerp rotation).

        Args:
            stamps (FloatArray | Stamp): Query stamps inside the series range

        Returns:
            FloatArray: (M, 4, 4) poses, or (4, 4) for a scalar stamp

        Raises:
            FormatError: If a stamp lies outside the series range
        """
        query = np.atleast_1d(np.asarray(stamps, dtype=np.float64))
        if (
            len(self) == 0
            or query.min() < self.stamps[0]
            or query.max() > self.stamps[-1]
        ):
            raise FormatError(
                f"stamps outside trajectory range "
                f"[{self.stamps[0] if len(self) else math.nan}, "
                f"{self.stamps[-1] if len(self) else math.nan}]"
            )
        out = np.tile(np.eye(4), (query.size, 1, 1))
        for axis in range(3):
            out[:, axis, 3] = np.interp(query, self.stamps, self.positions[:, axis])
        if len(self) == 1:
            out[:, :3, :3] = quat_to_matrix(self.quats[0])
        else:
            slerp = Slerp(self.stamps, Rotation.from_quat(self.quats))
            out[:, :3, :3] = slerp(query).as_matrix()
        return out[0] if np.ndim(stamps) == 0 else out


def read_tum(path: Path) -> PoseSeries:
    """Read a TUM trajectory ``stamp tx ty tz qx qy qz qw``."""
    table = read_table(
        path, ("stamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"), separator=None
    )
    quats = table[:, 4:8]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-12):
        raise FormatError(f"{path}: zero-norm quaternion")
    return PoseSeries(table[:, 0].copy(), table[:, 1:4].copy(), quats / norms[:, None])


def write_tum(path: Path, series: PoseSeries, header: Iterable[str] = ()) -> None:
    rows = (
        [series.stamps[i], *series.positions[i], *series.quats[i]]
        for i in range(len(series))
    )
    write_table(
        path,
        ("stamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"),
        rows,
        separator=" ",
        header=header,
        column_header=False,
    )


@dataclass(frozen=True)
class GnssSeries:
    """GNSS fixes in the projected frame with per-axis standard deviations."""

    stamps: FloatArray
    positions: FloatArray
    sigmas: FloatArray

    def __post_init__(self) -> None:
        _require_increasing(self.stamps, "GNSS")

    def __len__(self) -> int:
        return int(self.stamps.size)

    def at(self, stamp: Stamp) -> tuple[Vector3, Vector3]:
        """
        Position and sigma at ``stamp`` by linear interpolation.

        Stamps outside the series are clamped to the nearest fix.
        """
        if len(self) == 0:
            raise FormatError("empty GNSS series")
        if not self.stamps[0] <= stamp <= self.stamps[-1]:
            logger.warning("GNSS requested at %.3f outside [%.3f, %.3f], clamping",
                           stamp, self.stamps[0], self.stamps[-1])
        position = np.array(
            [np.interp(stamp, self.stamps, self.positions[:, k]) for k in range(3)]
        )
        sigma = np.array(
            [np.interp(stamp, self.stamps, self.sigmas[:, k]) for k in range(3)]
        )
        return position, sigma


def read_gnss_csv(path: Path) -> GnssSeries:
    table = read_table(path, GNSS_COLUMNS)
    return GnssSeries(table[:, 0].copy(), table[:, 1:4].copy(), table[:, 4:7].copy())


def write_gnss_csv(
    path: Path, series: GnssSeries, header: Iterable[str] = ()
) -> None:
    rows = (
        [series.stamps[i], *series.positions[i], *series.sigmas[i]]
        for i in range(len(series))
    )
    write_table(path, GNSS_COLUMNS, rows, header=header)


class ImuSample(NamedTuple):
    """Single IMU measurement (gyro rad/s, specific force m/s^2)."""

    stamp: Stamp
    gyro: Vector3
    accel: Vector3


@dataclass(frozen=True)
class ImuSeries:
    """Batch of IMU samples with strictly increasing stamps."""

    stamps: FloatArray
    gyro: FloatArray
    accel: FloatArray

    def __post_init__(self) -> None:
        _require_increasing(self.stamps, "IMU")

    def __len__(self) -> int:
        return int(self.stamps.size)

    def __iter__(self):  # type: ignore[no-untyped-def]
        for i in range(len(self)):
            yield ImuSample(float(self.stamps[i]), self.gyro[i], self.accel[i])

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuSeries":
        return cls(
            np.array([s.stamp for s in samples], dtype=np.float64),
            np.array([s.gyro for s in samples], dtype=np.float64).reshape(-1, 3),
            np.array([s.accel for s in samples], dtype=np.float64).reshape(-1, 3),
        )


def read_imu_csv(path: Path) -> ImuSeries:
    table = read_table(path, IMU_COLUMNS)
    return ImuSeries(table[:, 0].copy(), table[:, 1:4].copy(), table[:, 4:7].copy())


def write_imu_csv(path: Path, series: ImuSeries, header: Iterable[str] = ()) -> None:
    rows = (
        [series.stamps[i], *series.gyro[i], *series.accel[i]]
        for i in range(len(series))
    )
    write_table(path, IMU_COLUMNS, rows, header=header)


@dataclass(frozen=True)
class AttitudeSeries:
    """
    Orientation priors: accelerometer roll/pitch, optional magnetometer yaw and
    optional ultrasonic height above ground (NaN when absent).
    """

    stamps: FloatArray
    roll: FloatArray
    pitch: FloatArray
    yaw: FloatArray
    ultrasonic: FloatArray

    def __len__(self) -> int:
        return int(self.stamps.size)

    def nearest(self, stamp: Stamp) -> int:
        if len(self) == 0:
            raise FormatError("empty attitude series")
        return int(np.argmin(np.abs(self.stamps - stamp)))


def read_attitude_csv(path: Path) -> AttitudeSeries:
    table = read_table(path, ATTITUDE_COLUMNS, allow_missing=True)
    _require_increasing(table[:, 0], "attitude")
    return AttitudeSeries(*(table[:, k].copy() for k in range(5)))


def write_attitude_csv(
    path: Path, series: AttitudeSeries, header: Iterable[str] = ()
) -> None:
    rows = (
        [
            series.stamps[i],
            series.roll[i],
            series.pitch[i],
            series.yaw[i],
            series.ultrasonic[i],
        ]
        for i in range(len(series))
    )
    write_table(path, ATTITUDE_COLUMNS, rows, header=header)
