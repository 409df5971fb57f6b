"""Poses and quaternion math used throughout the simulation.

Quaternions are stored as ``[w, x, y, z]`` numpy arrays and kept unit-norm;
every operation that writes a quaternion renormalizes it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        return quat_identity()
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    uv = np.cross(u, v)
    uuv = np.cross(u, uv)
    return np.asarray(v, dtype=float) + 2.0 * (w * uv + uuv)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return quat_identity()
    half = 0.5 * angle
    s = np.sin(half) / n
    return quat_normalize(np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s]))


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        q = np.array([1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]])
        return quat_normalize(q)
    return quat_from_axis_angle(r, angle)


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithm map: quaternion to the minimal rotation vector (angle <= pi)."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    w = min(1.0, max(-1.0, q[0]))
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return 2.0 * q[1:4]
    return q[1:4] * (angle / s)


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])


def yaw_from_quat(q: np.ndarray) -> float:
    """Z euler angle of a rotation (valid for top-down gripper orientations)."""
    w, x, y, z = q
    return float(np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))


def quat_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    """Absolute rotation angle between two orientations, in [0, pi]."""
    d = abs(float(np.dot(qa, qb)))
    return 2.0 * float(np.arccos(min(1.0, d)))


@dataclass
class Pose:
    """Rigid transform: position in meters plus a unit quaternion."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.orientation = quat_normalize(self.orientation)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply other in self's frame."""
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        inv_q = quat_conjugate(self.orientation)
        return Pose(-quat_rotate(inv_q, self.position), inv_q)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, p)

    def inverse_transform_point(self, p: np.ndarray) -> np.ndarray:
        return quat_rotate(quat_conjugate(self.orientation), np.asarray(p, dtype=float) - self.position)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def as_vector(self) -> np.ndarray:
        """7-vector [position, quaternion]."""
        return np.concatenate([self.position, self.orientation])

    def to_6vec(self) -> np.ndarray:
        """6-vector [position, rotation-vector] used by the noise channel."""
        return np.concatenate([self.position, rotvec_from_quat(self.orientation)])

    @staticmethod
    def from_6vec(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=float)
        return Pose(v[:3], quat_from_rotvec(v[3:6]))

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            np.allclose(self.position, other.position, atol=tol)
            and quat_angle(self.orientation, other.orientation) <= tol
        )
