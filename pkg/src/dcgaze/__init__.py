"""Differential-contrastive gaze estimation."""

from .geometry import GazeDirection, UnitVector3, angular_error, gaze_l1_difference

__all__ = ["GazeDirection", "UnitVector3", "angular_error", "gaze_l1_difference"]
__version__ = "0.1.0"
