"""Deterministic rigid-body world with penalty contacts.

State lives in packed arrays consumed by the numba kernels; the dataclass
API (`RigidBody`, `ShapePrimitive`, `ContactPoint`) is the construction and
inspection surface. A world is single-threaded; independent worlds can be
stepped in parallel and pickled across threads/processes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ConfigurationError, SimulationDivergedError
from ..geometry import Pose
from . import kernels
from .shapes import ContactPoint, RigidBody, ShapePrimitive

_CONTACT_CAPACITY = 4096


@dataclass
class SimParams:
    """Contact and integration parameters (all SI units)."""

    k_n: float = 2.0e4  # normal penalty stiffness, N/m
    c_n: float = 50.0  # normal damping, N*s/m
    k_t: float = 2.0e4  # tangential anchor-spring stiffness, N/m
    c_t: float = 200.0  # tangential viscous coefficient, N*s/m
    dt: float = 2.5e-3  # internal substep
    dt_max: float = 0.02
    gravity: tuple = (0.0, 0.0, -9.81)
    static_friction_anchors: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SimParams":
        p = SimParams(**{k: v for k, v in d.items() if k != "gravity"})
        if "gravity" in d:
            p.gravity = tuple(d["gravity"])
        return p


class World:
    """A collection of rigid bodies stepped with semi-implicit Euler."""

    def __init__(self, params: SimParams | None = None):
        self.params = params or SimParams()
        self._descriptors: list[RigidBody] = []
        self._shape_slices: list[slice] = []
        self.n_bodies = 0
        self.n_shapes = 0
        self._dirty = True
        self._n_contacts = 0
        self.time = 0.0
        self._alloc_bodies(0)
        self._alloc_shapes(0)
        self._external_force = np.zeros((0, 3))

    # ------------------------------------------------------------------ setup

    def _alloc_bodies(self, n):
        self.body_pos = np.zeros((n, 3))
        self.body_quat = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
        self.body_linvel = np.zeros((n, 3))
        self.body_angvel = np.zeros((n, 3))
        self.body_mass = np.zeros(n)
        self.body_invmass = np.zeros(n)
        self.body_invinertia = np.zeros((n, 3, 3))
        self.body_friction = np.zeros(n)
        self.body_kinematic = np.zeros(n, dtype=np.uint8)
        self.target_pos = np.zeros((n, 3))
        self.target_quat = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
        self.lin_cap = np.full(n, 1e6)
        self.ang_cap = np.full(n, 1e6)

    def _alloc_shapes(self, n):
        self.shape_body = np.zeros(n, dtype=np.int64)
        self.shape_kind = np.zeros(n, dtype=np.int64)
        self.shape_params = np.zeros((n, 3))
        self.shape_local_pos = np.zeros((n, 3))
        self.shape_local_quat = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))

    def add_body(self, body: RigidBody) -> int:
        """Insert a body; returns its id (ids are dense, in insertion order)."""
        if body.kinematic is False:
            for s in body.shapes:
                if s.kind == "halfplane":
                    raise ConfigurationError("halfplane shapes require a kinematic body")
        idx = self.n_bodies
        body.id = idx
        self._descriptors.append(body)

        def grow(arr, new_rows):
            return np.concatenate([arr, new_rows], axis=0)

        self.body_pos = grow(self.body_pos, body.pose.position[None])
        self.body_quat = grow(self.body_quat, body.pose.orientation[None])
        self.body_linvel = grow(self.body_linvel, body.linear_velocity[None])
        self.body_angvel = grow(self.body_angvel, body.angular_velocity[None])
        self.body_mass = np.append(self.body_mass, body.mass)
        self.body_invmass = np.append(self.body_invmass, 0.0 if body.kinematic else 1.0 / body.mass)
        inv_inertia = np.zeros((3, 3)) if body.kinematic else np.linalg.inv(body.inertia)
        self.body_invinertia = grow(self.body_invinertia, inv_inertia[None])
        self.body_friction = np.append(self.body_friction, body.friction)
        self.body_kinematic = np.append(self.body_kinematic, np.uint8(1 if body.kinematic else 0))
        self.target_pos = grow(self.target_pos, body.pose.position[None])
        self.target_quat = grow(self.target_quat, body.pose.orientation[None])
        self.lin_cap = np.append(self.lin_cap, 1e6)
        self.ang_cap = np.append(self.ang_cap, 1e6)

        s0 = self.n_shapes
        for s in body.shapes:
            self.shape_body = np.append(self.shape_body, idx)
            self.shape_kind = np.append(self.shape_kind, s.kind_code)
            self.shape_params = grow(self.shape_params, s.params[None])
            self.shape_local_pos = grow(self.shape_local_pos, s.local_offset.position[None])
            self.shape_local_quat = grow(self.shape_local_quat, s.local_offset.orientation[None])
            self.n_shapes += 1
        self._shape_slices.append(slice(s0, self.n_shapes))

        self.n_bodies += 1
        self._external_force = np.zeros((self.n_bodies, 3))
        self._dirty = True
        return idx

    def add_ground(self, friction: float = 0.8) -> int:
        """Static tabletop: halfplane z=0 with +z outward."""
        return self.add_body(
            RigidBody(
                id=-1,
                pose=Pose(),
                shapes=[ShapePrimitive("halfplane", np.zeros(3))],
                mass=0.0,
                friction=friction,
                kinematic=True,
                name="ground",
            )
        )

    def _rebuild(self):
        """Pair table and scratch buffers; called after topology changes."""
        pa, pb = [], []
        for i in range(self.n_bodies):
            for j in range(i + 1, self.n_bodies):
                for si in range(self._shape_slices[i].start, self._shape_slices[i].stop):
                    for sj in range(self._shape_slices[j].start, self._shape_slices[j].stop):
                        if self.shape_kind[si] == kernels.KIND_HALFPLANE and self.shape_kind[sj] == kernels.KIND_HALFPLANE:
                            continue
                        pa.append(si)
                        pb.append(sj)
        self.pair_sa = np.asarray(pa, dtype=np.int64)
        self.pair_sb = np.asarray(pb, dtype=np.int64)
        n_pairs = len(pa)
        self.anchor_active = np.zeros(n_pairs, dtype=np.uint8)
        self.anchor_la = np.zeros((n_pairs, 3))
        self.anchor_lb = np.zeros((n_pairs, 3))
        n = self.n_shapes
        self._w_pos = np.zeros((n, 3))
        self._w_quat = np.zeros((n, 4))
        self._w_rot = np.zeros((n, 3, 3))
        self._aabb_lo = np.zeros((n, 3))
        self._aabb_hi = np.zeros((n, 3))
        self._con_sa = np.zeros(_CONTACT_CAPACITY, dtype=np.int64)
        self._con_sb = np.zeros(_CONTACT_CAPACITY, dtype=np.int64)
        self._con_pair = np.zeros(_CONTACT_CAPACITY, dtype=np.int64)
        self._con_point = np.zeros((_CONTACT_CAPACITY, 3))
        self._con_normal = np.zeros((_CONTACT_CAPACITY, 3))
        self._con_pen = np.zeros(_CONTACT_CAPACITY)
        self._con_force = np.zeros((_CONTACT_CAPACITY, 3))
        self._body_force = np.zeros((self.n_bodies, 3))
        self._body_torque = np.zeros((self.n_bodies, 3))
        self._n_contacts = 0
        self._dirty = False

    # ------------------------------------------------------------ body access

    def body_pose(self, body_id: int) -> Pose:
        return Pose(self.body_pos[body_id].copy(), self.body_quat[body_id].copy())

    def set_body_pose(self, body_id: int, pose: Pose, reset_velocity: bool = True):
        """Teleport; also moves the kinematic target so the body stays put."""
        self.body_pos[body_id] = pose.position
        self.body_quat[body_id] = pose.orientation
        self.target_pos[body_id] = pose.position
        self.target_quat[body_id] = pose.orientation
        if reset_velocity:
            self.body_linvel[body_id] = 0.0
            self.body_angvel[body_id] = 0.0

    def body_velocity(self, body_id: int) -> tuple[np.ndarray, np.ndarray]:
        return self.body_linvel[body_id].copy(), self.body_angvel[body_id].copy()

    def set_body_velocity(self, body_id: int, linear=None, angular=None):
        if linear is not None:
            self.body_linvel[body_id] = np.asarray(linear, dtype=float)
        if angular is not None:
            self.body_angvel[body_id] = np.asarray(angular, dtype=float)

    def set_kinematic_target(self, body_id: int, pose: Pose, lin_cap: float | None = None, ang_cap: float | None = None):
        if not self.body_kinematic[body_id]:
            raise ConfigurationError(f"body {body_id} is not kinematic")
        self.target_pos[body_id] = pose.position
        self.target_quat[body_id] = pose.orientation
        if lin_cap is not None:
            self.lin_cap[body_id] = lin_cap
        if ang_cap is not None:
            self.ang_cap[body_id] = ang_cap

    def set_external_force(self, body_id: int, force):
        self._external_force[body_id] = np.asarray(force, dtype=float)

    def clear_external_forces(self):
        self._external_force[:] = 0.0

    def kinetic_energy(self, body_id: int) -> float:
        v = self.body_linvel[body_id]
        w = self.body_angvel[body_id]
        m = self.body_mass[body_id]
        desc = self._descriptors[body_id]
        R = Pose(self.body_pos[body_id], self.body_quat[body_id]).rotation_matrix()
        inertia_w = R @ desc.inertia @ R.T
        return float(0.5 * m * v @ v + 0.5 * w @ inertia_w @ w)

    def body_snapshot(self, body_id: int) -> RigidBody:
        d = self._descriptors[body_id]
        return RigidBody(
            id=body_id,
            pose=self.body_pose(body_id),
            shapes=d.shapes,
            mass=d.mass,
            inertia=d.inertia,
            friction=d.friction,
            kinematic=d.kinematic,
            linear_velocity=self.body_linvel[body_id].copy(),
            angular_velocity=self.body_angvel[body_id].copy(),
            name=d.name,
        )

    def body_id_by_name(self, name: str) -> int:
        for i, d in enumerate(self._descriptors):
            if d.name == name:
                return i
        raise KeyError(name)

    # --------------------------------------------------------------- stepping

    def step(self, dt: float | None = None):
        """One integration substep: kinematics, contacts, forces, dynamics."""
        dt = self.params.dt if dt is None else float(dt)
        if dt <= 0 or dt > self.params.dt_max:
            raise ConfigurationError(f"dt must be in (0, {self.params.dt_max}], got {dt}")
        if self._dirty:
            self._rebuild()
        kernels.kinematic_advance(
            self.body_kinematic,
            self.body_pos,
            self.body_quat,
            self.body_linvel,
            self.body_angvel,
            self.target_pos,
            self.target_quat,
            self.lin_cap,
            self.ang_cap,
            dt,
        )
        self._detect_into_buffers()
        kernels.resolve_forces(
            self._n_contacts,
            self._con_sa,
            self._con_sb,
            self._con_pair,
            self._con_point,
            self._con_normal,
            self._con_pen,
            self.shape_body,
            self.body_pos,
            self.body_quat,
            self.body_linvel,
            self.body_angvel,
            self.body_invmass,
            self.body_invinertia,
            self.body_friction,
            self.params.k_n,
            self.params.c_n,
            self.params.k_t,
            self.params.c_t,
            dt,
            self.params.static_friction_anchors,
            self.anchor_active,
            self.anchor_la,
            self.anchor_lb,
            self._con_force,
            self._body_force,
            self._body_torque,
        )
        bad = kernels.integrate_dynamics(
            self.body_kinematic,
            self.body_pos,
            self.body_quat,
            self.body_linvel,
            self.body_angvel,
            self.body_invmass,
            self.body_invinertia,
            self._body_force,
            self._body_torque,
            self._external_force,
            np.asarray(self.params.gravity, dtype=float),
            dt,
        )
        if bad >= 0:
            raise SimulationDivergedError(int(bad))
        self.time += dt

    def advance(self, duration: float):
        """Step with the internal substep until `duration` has elapsed."""
        n = max(1, int(round(duration / self.params.dt)))
        for _ in range(n):
            self.step(self.params.dt)

    def _detect_into_buffers(self):
        kernels.compute_world_transforms(
            self.body_pos,
            self.body_quat,
            self.shape_body,
            self.shape_local_pos,
            self.shape_local_quat,
            self._w_pos,
            self._w_quat,
            self._w_rot,
        )
        kernels.compute_aabbs(self.shape_kind, self.shape_params, self._w_pos, self._w_rot, self._aabb_lo, self._aabb_hi)
        n = kernels.narrowphase(
            self.pair_sa,
            self.pair_sb,
            self.shape_kind,
            self.shape_params,
            self._w_pos,
            self._w_rot,
            self._aabb_lo,
            self._aabb_hi,
            self._con_sa,
            self._con_sb,
            self._con_pair,
            self._con_point,
            self._con_normal,
            self._con_pen,
        )
        if n < 0:
            raise SimulationDivergedError(-1, "contact buffer overflow")
        self._n_contacts = n

    # ------------------------------------------------------------- inspection

    def contacts(self) -> list[ContactPoint]:
        """Materialize the last substep's contacts (forces as resolved)."""
        out = []
        for i in range(self._n_contacts):
            sa = int(self._con_sa[i])
            sb = int(self._con_sb[i])
            ba = int(self.shape_body[sa])
            bb = int(self.shape_body[sb])
            out.append(
                ContactPoint(
                    body_a=ba,
                    body_b=bb,
                    shape_a=sa - self._shape_slices[ba].start,
                    shape_b=sb - self._shape_slices[bb].start,
                    point=self._con_point[i].copy(),
                    normal=self._con_normal[i].copy(),
                    penetration=float(self._con_pen[i]),
                    force=self._con_force[i].copy(),
                )
            )
        return out

    def per_shape_forces(self, body_id: int) -> np.ndarray:
        """(n_shapes, 3) net contact force on each of the body's shapes, world frame."""
        sl = self._shape_slices[body_id]
        out = np.zeros((sl.stop - sl.start, 3))
        n = self._n_contacts
        if n == 0:
            return out
        sa = self._con_sa[:n]
        sb = self._con_sb[:n]
        f = self._con_force[:n]
        mask_b = (sb >= sl.start) & (sb < sl.stop)
        if mask_b.any():
            np.add.at(out, sb[mask_b] - sl.start, f[mask_b])
        mask_a = (sa >= sl.start) & (sa < sl.stop)
        if mask_a.any():
            np.add.at(out, sa[mask_a] - sl.start, -f[mask_a])
        return out

    def contact_force_between(self, body_a: int, body_b: int) -> np.ndarray:
        """Net force exerted by body_a's contacts on body_b, world frame."""
        n = self._n_contacts
        if n == 0:
            return np.zeros(3)
        ba = self.shape_body[self._con_sa[:n]]
        bb = self.shape_body[self._con_sb[:n]]
        f = self._con_force[:n]
        out = np.zeros(3)
        m = (ba == body_a) & (bb == body_b)
        if m.any():
            out += f[m].sum(axis=0)
        m = (ba == body_b) & (bb == body_a)
        if m.any():
            out -= f[m].sum(axis=0)
        return out

    def bodies_in_contact(self, body_a: int, body_b: int, min_force: float = 0.0) -> bool:
        n = self._n_contacts
        if n == 0:
            return False
        ba = self.shape_body[self._con_sa[:n]]
        bb = self.shape_body[self._con_sb[:n]]
        m = ((ba == body_a) & (bb == body_b)) | ((ba == body_b) & (bb == body_a))
        if not m.any():
            return False
        if min_force <= 0.0:
            return True
        f = self._con_force[:n][m]
        return bool(np.linalg.norm(f.sum(axis=0)) > min_force or (np.linalg.norm(f, axis=1) > min_force).any())

    # ------------------------------------------------------------------- JSON

    def to_config(self) -> dict:
        return {
            "sim_params": self.params.to_dict(),
            "bodies": [
                {
                    "name": d.name,
                    "kinematic": bool(d.kinematic),
                    "mass": float(d.mass),
                    "friction": float(d.friction),
                    "inertia": np.asarray(d.inertia).tolist(),
                    "position": self.body_pos[i].tolist(),
                    "orientation": self.body_quat[i].tolist(),
                    "linear_velocity": self.body_linvel[i].tolist(),
                    "angular_velocity": self.body_angvel[i].tolist(),
                    "shapes": [s.to_dict() for s in d.shapes],
                }
                for i, d in enumerate(self._descriptors)
            ],
        }

    @staticmethod
    def from_config(config: dict | str) -> "World":
        if isinstance(config, str):
            with open(config) as f:
                config = json.load(f)
        w = World(SimParams.from_dict(config.get("sim_params", {})))
        for b in config["bodies"]:
            body = RigidBody(
                id=-1,
                pose=Pose(np.asarray(b["position"]), np.asarray(b["orientation"])),
                shapes=[ShapePrimitive.from_dict(s) for s in b["shapes"]],
                mass=b["mass"],
                inertia=np.asarray(b["inertia"]) if "inertia" in b else None,
                friction=b["friction"],
                kinematic=b["kinematic"],
                linear_velocity=np.asarray(b.get("linear_velocity", np.zeros(3))),
                angular_velocity=np.asarray(b.get("angular_velocity", np.zeros(3))),
                name=b.get("name", ""),
            )
            w.add_body(body)
        return w

    def save_config(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_config(), f, indent=2)


# ------------------------------------------------------------- public ops


def detect_contacts(world: World) -> list[ContactPoint]:
    """All overlapping shape pairs at the current state, forces zero-filled."""
    if world.n_bodies < 1:
        raise ConfigurationError("world has no bodies")
    if world._dirty:
        world._rebuild()
    world._detect_into_buffers()
    out = world.contacts()
    for c in out:
        c.force = np.zeros(3)
    return out


def resolve_contact_forces(
    world: World,
    contacts: list[ContactPoint],
    k_n: float | None = None,
    c_n: float | None = None,
    mu_pair: float | None = None,
    c_t: float | None = None,
) -> list[ContactPoint]:
    """Fill contact forces: F_n = max(0, k_n*pen - c_n*v_n), tangential
    min(c_t*|v_t|, mu*F_n) opposing slip. Stateless (no friction anchors)."""
    p = world.params
    k_n = p.k_n if k_n is None else k_n
    c_n = p.c_n if c_n is None else c_n
    c_t = p.c_t if c_t is None else c_t
    n = len(contacts)
    if n == 0:
        return []
    con_sa = np.zeros(n, dtype=np.int64)
    con_sb = np.zeros(n, dtype=np.int64)
    con_pair = np.arange(n, dtype=np.int64)  # one pair per contact: no grouping needed statelessly
    con_point = np.zeros((n, 3))
    con_normal = np.zeros((n, 3))
    con_pen = np.zeros(n)
    for i, c in enumerate(contacts):
        con_sa[i] = world._shape_slices[c.body_a].start + c.shape_a
        con_sb[i] = world._shape_slices[c.body_b].start + c.shape_b
        con_point[i] = c.point
        con_normal[i] = c.normal
        con_pen[i] = c.penetration
    friction = world.body_friction.copy()
    if mu_pair is not None:
        friction = np.full_like(friction, float(mu_pair))  # sqrt(mu*mu) = mu
    out_force = np.zeros((n, 3))
    body_force = np.zeros((world.n_bodies, 3))
    body_torque = np.zeros((world.n_bodies, 3))
    kernels.resolve_forces(
        n,
        con_sa,
        con_sb,
        con_pair,
        con_point,
        con_normal,
        con_pen,
        world.shape_body,
        world.body_pos,
        world.body_quat,
        world.body_linvel,
        world.body_angvel,
        world.body_invmass,
        world.body_invinertia,
        friction,
        k_n,
        c_n,
        world.params.k_t,
        c_t,
        0.0,  # dt = 0: raw textbook formula, no stability caps
        False,
        np.zeros(n, dtype=np.uint8),
        np.zeros((n, 3)),
        np.zeros((n, 3)),
        out_force,
        body_force,
        body_torque,
    )
    resolved = []
    for i, c in enumerate(contacts):
        resolved.append(
            ContactPoint(
                body_a=c.body_a,
                body_b=c.body_b,
                shape_a=c.shape_a,
                shape_b=c.shape_b,
                point=c.point.copy(),
                normal=c.normal.copy(),
                penetration=c.penetration,
                force=out_force[i].copy(),
            )
        )
    return resolved


def net_force_on_shape(contacts: list[ContactPoint], body_id: int, shape_index: int) -> np.ndarray:
    """Net contact force exerted on one primitive, world frame."""
    found_body = False
    out = np.zeros(3)
    for c in contacts:
        if c.body_a == body_id or c.body_b == body_id:
            found_body = True
        if c.body_b == body_id and c.shape_b == shape_index:
            out += c.force
        elif c.body_a == body_id and c.shape_a == shape_index:
            out -= c.force
    if not found_body:
        # allow querying untouched bodies, but reject unknown ids when the
        # caller passes contacts from a world that can validate
        pass
    return out
