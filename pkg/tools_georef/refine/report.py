"""
Refinement report: one CSV row per local map.
"""

import csv
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from tools_georef.common.exceptions import FormatError
from tools_georef.common.formats import format_float
from tools_georef.common.lie import pose_from_quat, pose_to_quat
from tools_georef.common.types import Pose, RejectionReason

from .search import RefinementResult

REPORT_COLUMNS = (
    "map_id",
    "offset_e",
    "offset_n",
    "yaw",
    "converged",
    "s_W",
    "kappa_fwd",
    "kappa_bwd",
    "accepted",
    "t_ref_x",
    "t_ref_y",
    "t_ref_z",
    "t_ref_qx",
    "t_ref_qy",
    "t_ref_qz",
    "t_ref_qw",
    "stamp",
    "reason",
)


class RefinementRecord(BaseModel):
    """One report row; ``t_ref`` fields are projected, NaN when rejected."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    map_id: int
    offset_e: float = math.nan
    offset_n: float = math.nan
    yaw: float = math.nan
    converged: bool = False
    s_W: float = math.nan  # noqa: N815
    kappa_fwd: float = math.nan
    kappa_bwd: float = math.nan
    accepted: bool = False
    t_ref_x: float = math.nan
    t_ref_y: float = math.nan
    t_ref_z: float = math.nan
    t_ref_qx: float = math.nan
    t_ref_qy: float = math.nan
    t_ref_qz: float = math.nan
    t_ref_qw: float = math.nan
    stamp: float = math.nan
    reason: RejectionReason = RejectionReason.NONE

    @classmethod
    def from_result(
        cls, result: RefinementResult, frame_origin: np.ndarray
    ) -> "RefinementRecord":
        values: dict[str, object] = {
            "map_id": result.map_id,
            "stamp": result.stamp,
            "accepted": result.accepted,
            "reason": result.reason,
        }
        best = result.best
        if best is not None and best.registration is not None:
            registration = best.registration
            values.update(
                offset_e=float(best.grid_offset[0]),
                offset_n=float(best.grid_offset[1]),
                yaw=best.yaw,
                converged=registration.converged,
                s_W=math.nan if best.score is None else best.score,
                kappa_fwd=registration.cond_local_to_model,
                kappa_bwd=registration.cond_model_to_local,
            )
        pose = result.refined_pose
        if pose is not None:
            translation, quat = pose_to_quat(pose)
            translation = np.array(translation, dtype=np.float64)
            translation[:2] += np.asarray(frame_origin, dtype=np.float64)[:2]
            values.update(
                zip(
                    (
                        "t_ref_x",
                        "t_ref_y",
                        "t_ref_z",
                        "t_ref_qx",
                        "t_ref_qy",
                        "t_ref_qz",
                        "t_ref_qw",
                    ),
                    (*map(float, translation), *map(float, quat)),
                )
            )
        return cls.model_validate(values)

    @property
    def refined_pose(self) -> Optional[Pose]:
        """Accepted pose in the projected frame."""
        if not self.accepted:
            return None
        return pose_from_quat(
            np.array([self.t_ref_qx, self.t_ref_qy, self.t_ref_qz, self.t_ref_qw]),
            np.array([self.t_ref_x, self.t_ref_y, self.t_ref_z]),
        )

    def as_row(self) -> list[str]:
        row: list[str] = []
        for column in REPORT_COLUMNS:
            value = getattr(self, column)
            if isinstance(value, bool):
                row.append(str(int(value)))
            elif isinstance(value, RejectionReason):
                row.append(value.value)
            elif isinstance(value, int):
                row.append(str(value))
            else:
                row.append(format_float(value))
        return row


def write_refinement_report(
    path: Path, records: Iterable[RefinementRecord], header: Iterable[str] = ()
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as stream:
        for line in header:
            stream.write((line if line.startswith("#") else f"# {line}") + "\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(record.as_row() for record in records)


def read_refinements(path: Path) -> list[RefinementRecord]:
    """
    Read a refinement report.

    Raises:
        FormatError: Missing file, unknown columns or invalid values
    """
    if not path.is_file():
        raise FormatError(f"File not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as stream:
        lines = [line for line in stream if line.strip() and not line.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or tuple(reader.fieldnames) != REPORT_COLUMNS:
        raise FormatError(f"{path}: unexpected report columns {reader.fieldnames}")
    records: list[RefinementRecord] = []
    for row_number, row in enumerate(reader, start=1):
        try:
            records.append(RefinementRecord.model_validate(row))
        except ValidationError as exc:
            raise FormatError(
                f"{path}: invalid report row {row_number}: {exc.errors()[0]['msg']}",
                details={"row": row_number},
            ) from exc
    return records
