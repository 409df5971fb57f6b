"""Floating 4-DoF gripper: two kinematic sensorized fingers driven by a
(TCP position, yaw, opening width) command.

The TCP sits midway between the finger inner faces at fingertip-center
height. Finger bodies carry the 50 sensor primitives each; they track their
kinematic targets exactly within one policy period, while the commanded
width advances under a closing-speed cap like a real gripper actuator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_angle, quat_from_yaw, quat_multiply, yaw_from_quat
from .physics.shapes import RigidBody
from .physics.world import World
from .tactile import SensorLayout, N_PRIMITIVES

MAX_OPENING = 0.08
FINGER_LIN_CAP = 0.8  # m/s, generous: per-step action caps bind first
FINGER_ANG_CAP = 8.0  # rad/s
WIDTH_RATE = 0.16  # m/s of opening change (0.08 m/s per finger)


@dataclass
class GripperCommand:
    position: np.ndarray
    yaw: float
    width: float


class GripperRig:
    """Owns the two finger bodies of one world."""

    def __init__(self, world: World, layout: SensorLayout, home: Pose, width: float = MAX_OPENING, friction: float = 1.0):
        self.world = world
        self.layout = layout
        self.half_depth = 0.0075 * layout.scale  # inner face offset from finger center
        self.cmd = GripperCommand(home.position.copy(), yaw_from_quat(home.orientation), float(width))
        self._applied_width = float(width)
        self.left_id = world.add_body(
            RigidBody(
                id=-1,
                pose=self._finger_pose("left", home.position, self.cmd.yaw, width),
                shapes=layout.primitives,
                mass=0.1,
                kinematic=True,
                friction=friction,
                name="finger_left",
            )
        )
        self.right_id = world.add_body(
            RigidBody(
                id=-1,
                pose=self._finger_pose("right", home.position, self.cmd.yaw, width),
                shapes=layout.primitives,
                mass=0.1,
                kinematic=True,
                friction=friction,
                name="finger_right",
            )
        )
        for fid in (self.left_id, self.right_id):
            world.lin_cap[fid] = FINGER_LIN_CAP
            world.ang_cap[fid] = FINGER_ANG_CAP

    def _finger_pose(self, side: str, tcp_pos: np.ndarray, yaw: float, width: float) -> Pose:
        q = quat_from_yaw(yaw)
        off = width / 2 + self.half_depth
        if side == "left":
            local = np.array([0.0, -off, 0.0])
            fq = q
        else:
            local = np.array([0.0, +off, 0.0])
            fq = quat_multiply(q, quat_from_yaw(np.pi))
        return Pose(tcp_pos + Pose(np.zeros(3), q).transform_point(local) - np.zeros(3), fq)

    # ------------------------------------------------------------- commanding

    def set_command(self, position: np.ndarray, yaw: float, width: float):
        """Issue the per-policy-step command; width advances under WIDTH_RATE."""
        self.cmd = GripperCommand(np.asarray(position, dtype=float).copy(), float(yaw), float(np.clip(width, 0.0, MAX_OPENING)))

    def push_targets(self, policy_dt: float):
        """Advance the applied width and update the finger kinematic targets.

        Speed caps are set so each finger reaches its target exactly at the
        end of the policy period: constant-velocity motion instead of a sprint
        followed by a dwell, which keeps contact slip rates physical.
        """
        dw = np.clip(self.cmd.width - self._applied_width, -WIDTH_RATE * policy_dt, WIDTH_RATE * policy_dt)
        self._applied_width += dw
        for side, fid in (("left", self.left_id), ("right", self.right_id)):
            target = self._finger_pose(side, self.cmd.position, self.cmd.yaw, self._applied_width)
            dist = float(np.linalg.norm(target.position - self.world.body_pos[fid]))
            angle = quat_angle(target.orientation, self.world.body_quat[fid])
            self.world.set_kinematic_target(
                fid,
                target,
                lin_cap=dist / policy_dt + 1e-9,
                ang_cap=angle / policy_dt + 1e-9,
            )

    def teleport(self, position: np.ndarray, yaw: float, width: float):
        self.set_command(position, yaw, width)
        self._applied_width = float(np.clip(width, 0.0, MAX_OPENING))
        for side, fid in (("left", self.left_id), ("right", self.right_id)):
            self.world.set_body_pose(fid, self._finger_pose(side, self.cmd.position, self.cmd.yaw, self._applied_width))

    # -------------------------------------------------------------- observing

    def finger_poses(self) -> tuple[Pose, Pose]:
        return self.world.body_pose(self.left_id), self.world.body_pose(self.right_id)

    def tcp_pose(self) -> Pose:
        pl, pr = self.finger_poses()
        mid = 0.5 * (pl.position + pr.position)
        return Pose(mid, quat_from_yaw(yaw_from_quat(pl.orientation)))

    def opening(self) -> float:
        pl, pr = self.finger_poses()
        return float(np.linalg.norm(pr.position - pl.position) - 2 * self.half_depth)

    def per_finger_forces(self) -> tuple[np.ndarray, np.ndarray]:
        """(50, 3) world-frame net contact force on each sensor primitive."""
        fl = self.world.per_shape_forces(self.left_id)
        fr = self.world.per_shape_forces(self.right_id)
        assert fl.shape == (N_PRIMITIVES, 3)
        return fl, fr

    def finger_object_forces(self, object_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Net force each finger exerts on the object, world frame."""
        fl = self.world.contact_force_between(self.left_id, object_id)
        fr = self.world.contact_force_between(self.right_id, object_id)
        return fl, fr

    def fingers_touching(self, object_id: int, min_force: float) -> tuple[bool, bool]:
        fl, fr = self.finger_object_forces(object_id)
        return bool(np.linalg.norm(fl) > min_force), bool(np.linalg.norm(fr) > min_force)

    def grasp_point(self, side: str) -> np.ndarray:
        """Representative inner-face point near the tip, world frame (distance probe)."""
        pose = self.world.body_pose(self.left_id if side == "left" else self.right_id)
        local = np.array([0.0, self.half_depth, -0.008 * self.layout.scale])
        return pose.transform_point(local)
