from .odometry import AbstractOdometrySource

__all__ = ["AbstractOdometrySource"]
