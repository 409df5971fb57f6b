"""Parameterized grasp targets: a box, a capsule "can", and a bent-capsule
"banana". Stable resting orientations and grasp candidate tables are filled
in by the demo generator (see demos.prepare_objects)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import Pose, quat_from_axis_angle, quat_multiply
from .physics.shapes import RigidBody, ShapePrimitive


@dataclass
class StablePose:
    """Settled orientation plus the COM height it rests at."""

    orientation: np.ndarray
    height: float

    def to_dict(self) -> dict:
        return {"orientation": np.asarray(self.orientation).tolist(), "height": float(self.height)}

    @staticmethod
    def from_dict(d: dict) -> "StablePose":
        return StablePose(np.asarray(d["orientation"], dtype=float), d["height"])


@dataclass
class GraspCandidate:
    """A TCP pose and width, expressed in the object's resting frame.

    quality is the smaller of the two contacts' friction-cone margins (rad).
    """

    tcp_pose: Pose
    width: float
    quality: float

    def to_dict(self) -> dict:
        return {
            "position": self.tcp_pose.position.tolist(),
            "orientation": self.tcp_pose.orientation.tolist(),
            "width": float(self.width),
            "quality": float(self.quality),
        }

    @staticmethod
    def from_dict(d: dict) -> "GraspCandidate":
        return GraspCandidate(
            Pose(np.asarray(d["position"], dtype=float), np.asarray(d["orientation"], dtype=float)),
            d["width"],
            d["quality"],
        )


@dataclass
class ObjectSpec:
    name: str
    shapes: list[ShapePrimitive]
    mass: float
    friction: float
    stable_orientations: list[StablePose] = field(default_factory=list)
    grasp_candidates: dict[int, list[GraspCandidate]] = field(default_factory=dict)

    def build_body(self, pose: Pose) -> RigidBody:
        return RigidBody(
            id=-1,
            pose=pose,
            shapes=self.shapes,
            mass=self.mass,
            friction=self.friction,
            name=self.name,
        )

    def one_hot(self, index: int, n_obj: int) -> np.ndarray:
        v = np.zeros(n_obj)
        v[index] = 1.0
        return v

    def require_prepared(self):
        if not self.stable_orientations:
            raise ConfigurationError(f"object {self.name!r} has no stable orientations; run prepare_objects first")

    def geometry_key(self) -> dict:
        """Geometry-and-physics identity used for the grasp cache."""
        return {
            "name": self.name,
            "mass": self.mass,
            "friction": self.friction,
            "shapes": [s.to_dict() for s in self.shapes],
        }


def make_box() -> ObjectSpec:
    return ObjectSpec(
        name="box",
        shapes=[ShapePrimitive.cuboid([0.022, 0.035, 0.025])],
        mass=0.25,
        friction=0.6,
    )


def make_can() -> ObjectSpec:
    return ObjectSpec(
        name="can",
        shapes=[ShapePrimitive.capsule(0.026, 0.045)],
        mass=0.3,
        friction=0.5,
    )


def make_banana() -> ObjectSpec:
    # two capsules joined in a shallow V, long axis along local x
    bend = 0.20  # rad
    axis_to_x = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2)
    shapes = []
    for side in (-1.0, 1.0):
        q = quat_multiply(quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), side * bend), axis_to_x)
        center = np.array([side * 0.027, -0.0055 + 0.027 * np.sin(bend), 0.0])
        shapes.append(ShapePrimitive.capsule(0.016, 0.032, Pose(center, q)))
    return ObjectSpec(name="banana", shapes=shapes, mass=0.15, friction=0.7)


def standard_objects(names: list[str] | None = None) -> list[ObjectSpec]:
    makers = {"box": make_box, "can": make_can, "banana": make_banana}
    names = names or ["box", "can", "banana"]
    out = []
    for n in names:
        if n not in makers:
            raise ConfigurationError(f"unknown object {n!r} (choices: {sorted(makers)})")
        out.append(makers[n]())
    return out
