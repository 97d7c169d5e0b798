from .imu import (
    ImuResidual,
    PreintegratedDelta,
    imu_residual,
    imu_residual_jacobians,
    preintegrate,
    slice_imu,
)
from .spline import (
    AnchorState,
    SplineTrajectory,
    evaluate,
    evaluate_derivatives,
    exp_se3,
    fit_initial_spline,
    log_se3,
    read_spline,
    to_tum,
    write_spline,
)

__all__ = [
    "ImuResidual",
    "PreintegratedDelta",
    "imu_residual",
    "imu_residual_jacobians",
    "preintegrate",
    "slice_imu",
    "AnchorState",
    "SplineTrajectory",
    "evaluate",
    "evaluate_derivatives",
    "exp_se3",
    "fit_initial_spline",
    "log_se3",
    "read_spline",
    "to_tum",
    "write_spline",
]
