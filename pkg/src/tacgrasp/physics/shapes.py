"""Shape primitives, rigid-body descriptors, and contact records."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..geometry import Pose

# Shape kind codes shared with the numba kernels.
KIND_SPHERE = 0
KIND_CUBOID = 1
KIND_CAPSULE = 2
KIND_HALFPLANE = 3

_KIND_NAMES = {
    KIND_SPHERE: "sphere",
    KIND_CUBOID: "cuboid",
    KIND_CAPSULE: "capsule",
    KIND_HALFPLANE: "halfplane",
}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


@dataclass
class ShapePrimitive:
    """One collision/sensing primitive attached to a body.

    kind:   "sphere" (params: radius), "cuboid" (params: half-extents xyz),
            "capsule" (params: radius, half-length; axis = local z), or
            "halfplane" (no params; surface = local z=0 plane, +z outward).
    local_offset: pose of the primitive in the owning body's frame.
    """

    kind: str
    params: np.ndarray
    local_offset: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")
        p = np.zeros(3)
        vals = np.atleast_1d(np.asarray(self.params, dtype=float))
        p[: len(vals)] = vals
        self.params = p
        if self.kind == "sphere" and self.params[0] <= 0:
            raise ConfigurationError("sphere radius must be positive")
        if self.kind == "cuboid" and np.any(self.params <= 0):
            raise ConfigurationError("cuboid half-extents must be positive")
        if self.kind == "capsule" and (self.params[0] <= 0 or self.params[1] <= 0):
            raise ConfigurationError("capsule radius and half-length must be positive")

    @property
    def kind_code(self) -> int:
        return _KIND_CODES[self.kind]

    @staticmethod
    def sphere(radius: float, local_offset: Pose | None = None) -> "ShapePrimitive":
        return ShapePrimitive("sphere", np.array([radius, 0.0, 0.0]), local_offset or Pose())

    @staticmethod
    def cuboid(half_extents, local_offset: Pose | None = None) -> "ShapePrimitive":
        return ShapePrimitive("cuboid", np.asarray(half_extents, dtype=float), local_offset or Pose())

    @staticmethod
    def capsule(radius: float, half_length: float, local_offset: Pose | None = None) -> "ShapePrimitive":
        return ShapePrimitive("capsule", np.array([radius, half_length, 0.0]), local_offset or Pose())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params.tolist(),
            "local_position": self.local_offset.position.tolist(),
            "local_orientation": self.local_offset.orientation.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ShapePrimitive":
        return ShapePrimitive(
            d["kind"],
            np.asarray(d["params"], dtype=float),
            Pose(np.asarray(d["local_position"], dtype=float), np.asarray(d["local_orientation"], dtype=float)),
        )


def sphere_inertia(mass: float, radius: float) -> np.ndarray:
    i = 0.4 * mass * radius * radius
    return np.diag([i, i, i])


def box_inertia(mass: float, half_extents) -> np.ndarray:
    hx, hy, hz = np.asarray(half_extents, dtype=float)
    # full extents in the standard formula
    ex, ey, ez = 2 * hx, 2 * hy, 2 * hz
    return np.diag(
        [
            mass / 12.0 * (ey * ey + ez * ez),
            mass / 12.0 * (ex * ex + ez * ez),
            mass / 12.0 * (ex * ex + ey * ey),
        ]
    )


def capsule_inertia(mass: float, radius: float, half_length: float) -> np.ndarray:
    """Capsule with axis along local z (cylinder plus two hemispheres)."""
    r, h = float(radius), 2.0 * float(half_length)
    vol_cyl = np.pi * r * r * h
    vol_sph = 4.0 / 3.0 * np.pi * r ** 3
    m_cyl = mass * vol_cyl / (vol_cyl + vol_sph)
    m_sph = mass - m_cyl
    izz = 0.5 * m_cyl * r * r + 0.4 * m_sph * r * r
    ixx = (
        m_cyl * (h * h / 12.0 + r * r / 4.0)
        + m_sph * (0.4 * r * r + 0.5 * h * h / 2.0 + 0.375 * r * h)
    )
    return np.diag([ixx, ixx, izz])


@dataclass
class RigidBody:
    """Descriptor used to add a body to a World; live state is held by the World."""

    id: int
    pose: Pose
    shapes: list[ShapePrimitive]
    mass: float = 1.0
    inertia: np.ndarray | None = None
    friction: float = 0.5
    kinematic: bool = False
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = ""

    def __post_init__(self):
        if not self.kinematic and self.mass <= 0:
            raise ConfigurationError("dynamic bodies need mass > 0")
        if self.inertia is None:
            self.inertia = self._default_inertia()
        self.inertia = np.asarray(self.inertia, dtype=float)
        if not np.allclose(self.inertia, self.inertia.T):
            raise ConfigurationError("inertia tensor must be symmetric")
        if not self.kinematic and np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ConfigurationError("inertia tensor must be positive-definite")
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).copy()
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).copy()

    def _default_inertia(self) -> np.ndarray:
        """Sum of the shapes' own inertias, mass split by rough volume, offset by parallel axis."""
        if self.kinematic or not self.shapes:
            return np.eye(3)
        vols = []
        for s in self.shapes:
            if s.kind == "sphere":
                vols.append(4.0 / 3.0 * np.pi * s.params[0] ** 3)
            elif s.kind == "cuboid":
                vols.append(8.0 * np.prod(s.params))
            elif s.kind == "capsule":
                r, hl = s.params[0], s.params[1]
                vols.append(np.pi * r * r * 2 * hl + 4.0 / 3.0 * np.pi * r ** 3)
            else:
                vols.append(0.0)
        vols = np.asarray(vols)
        total = max(vols.sum(), 1e-12)
        inertia = np.zeros((3, 3))
        for s, v in zip(self.shapes, vols):
            m = self.mass * v / total
            if s.kind == "sphere":
                local = sphere_inertia(m, s.params[0])
            elif s.kind == "cuboid":
                local = box_inertia(m, s.params)
            else:
                local = capsule_inertia(m, s.params[0], s.params[1])
            R = s.local_offset.rotation_matrix()
            local = R @ local @ R.T
            d = s.local_offset.position
            local += m * (np.dot(d, d) * np.eye(3) - np.outer(d, d))
            inertia += local
        return inertia


@dataclass
class ContactPoint:
    """World-space contact between two shapes; force acts on body_b, its negation on body_a."""

    body_a: int
    body_b: int
    shape_a: int
    shape_b: int
    point: np.ndarray
    normal: np.ndarray  # unit, directed from a into b
    penetration: float
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
