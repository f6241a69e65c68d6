"""Gaze angle representations and the angular-error evaluation metric.

A gaze direction is a (pitch, yaw) pair in radians. The 3D convention used
throughout is the one common in appearance-based gaze work:

    v = (-cos(pitch) * sin(yaw), -sin(pitch), -cos(pitch) * cos(yaw))

so (0, 0) looks straight into the camera along -z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class GazeDirection:
    """A (pitch, yaw) angle pair in radians."""

    pitch: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.pitch) and math.isfinite(self.yaw)):
            raise ValueError(f"gaze angles must be finite, got ({self.pitch}, {self.yaw})")

    def normalized(self) -> "GazeDirection":
        """Wrap yaw into [-pi, pi] and clamp pitch into [-pi/2, pi/2]."""
        yaw = math.atan2(math.sin(self.yaw), math.cos(self.yaw))
        pitch = max(-math.pi / 2, min(math.pi / 2, self.pitch))
        return GazeDirection(pitch, yaw)

    def as_tuple(self) -> tuple[float, float]:
        return (self.pitch, self.yaw)


@dataclass(frozen=True)
class UnitVector3:
    """A 3D direction with unit norm (checked to 1e-9)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        norm2 = self.x * self.x + self.y * self.y + self.z * self.z
        if abs(norm2 - 1.0) > 1e-9:
            raise ValueError(f"not a unit vector: |v|^2 = {norm2}")

    def dot(self, other: "UnitVector3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z


def pitch_yaw_to_unit_vector(g: GazeDirection) -> UnitVector3:
    """Convert (pitch, yaw) angles to a 3D unit gaze vector."""
    cp = math.cos(g.pitch)
    v = (-cp * math.sin(g.yaw), -math.sin(g.pitch), -cp * math.cos(g.yaw))
    norm = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    return UnitVector3(v[0] / norm, v[1] / norm, v[2] / norm)


def angular_error(pred: GazeDirection, truth: GazeDirection) -> float:
    """Angle in degrees between two gaze directions; in [0, 180]."""
    d = pitch_yaw_to_unit_vector(pred).dot(pitch_yaw_to_unit_vector(truth))
    d = max(-1.0, min(1.0, d))
    return math.degrees(math.acos(d))


def gaze_l1_difference(g1: GazeDirection, g2: GazeDirection) -> float:
    """L1 distance |p1-p2| + |y1-y2| between two gaze directions, in radians."""
    return abs(g1.pitch - g2.pitch) + abs(g1.yaw - g2.yaw)
