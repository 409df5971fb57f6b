"""Grasp precomputation and scripted demonstrations.

Stable resting orientations come from drop simulation; grasp candidates from
antipodal ray sampling with a friction-cone acceptance test; demonstrations
are scripted approach-descend-close-hold trajectories executed in real
environments so their rewards and stability outcomes are genuine.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import json
import numpy as np

from .errors import ConfigurationError, InfeasibleDemoError
from .geometry import Pose, quat_angle, quat_from_axis_angle, quat_from_yaw, quat_multiply, yaw_from_quat
from .gripper import MAX_OPENING, WIDTH_RATE
from .objects import GraspCandidate, ObjectSpec, StablePose
from .physics import kernels
from .physics.world import SimParams, World
from .utils import config_hash

MIN_GRASP_Z = 0.018  # TCP height below which the fingertips stuff into the table
GRASP_WIDTH_CLEARANCE = 0.004
DESCENT_EXTRA_OPEN = 0.018  # fingers open this much wider than the grasp while descending
TOPDOWN_TILT_MAX = np.deg2rad(15.0)  # grasp axis must stay near-horizontal


# --------------------------------------------------------------------- rays


def _ray_sphere(o, d, c, r):
    w = o - c
    b = np.dot(w, d)
    disc = b * b - (np.dot(w, w) - r * r)
    if disc <= 0:
        return None
    s = np.sqrt(disc)
    return (-b - s, -b + s)


def _ray_box(o, d, pose: Pose, h):
    lo = pose.inverse_transform_point(o)
    R = pose.rotation_matrix()
    ld = R.T @ d
    t0, t1 = -np.inf, np.inf
    for i in range(3):
        if abs(ld[i]) < 1e-12:
            if abs(lo[i]) > h[i]:
                return None
            continue
        ta = (-h[i] - lo[i]) / ld[i]
        tb = (h[i] - lo[i]) / ld[i]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return (t0, t1)


def _ray_capsule(o, d, pose: Pose, r, hl):
    c = pose.position
    u = pose.rotation_matrix()[:, 2]
    ts = []
    w = o - c
    d_par = np.dot(d, u)
    w_par = np.dot(w, u)
    d_perp = d - d_par * u
    w_perp = w - w_par * u
    A = np.dot(d_perp, d_perp)
    B = 2 * np.dot(w_perp, d_perp)
    C = np.dot(w_perp, w_perp) - r * r
    if A > 1e-12:
        disc = B * B - 4 * A * C
        if disc > 0:
            s = np.sqrt(disc)
            for t in ((-B - s) / (2 * A), (-B + s) / (2 * A)):
                if abs(w_par + t * d_par) <= hl:
                    ts.append(t)
    for send in (-1.0, 1.0):
        hit = _ray_sphere(o, d, c + send * hl * u, r)
        if hit:
            for t in hit:
                ax = np.dot((o + t * d) - c, u)
                if (send < 0 and ax <= -hl) or (send > 0 and ax >= hl):
                    ts.append(t)
    if not ts:
        return None
    return (min(ts), max(ts))


def _shape_interval(o, d, shape, world_pose: Pose):
    if shape.kind == "sphere":
        return _ray_sphere(o, d, world_pose.position, shape.params[0])
    if shape.kind == "cuboid":
        return _ray_box(o, d, world_pose, shape.params)
    if shape.kind == "capsule":
        return _ray_capsule(o, d, world_pose, shape.params[0], shape.params[1])
    raise ConfigurationError(f"no ray routine for {shape.kind}")


def _surface_normal(x, shape, world_pose: Pose):
    p = world_pose.inverse_transform_point(x)
    R = world_pose.rotation_matrix()
    if shape.kind == "sphere":
        n = p
    elif shape.kind == "cuboid":
        h = shape.params
        scores = np.abs(np.abs(p) - h)
        i = int(np.argmin(scores))
        n = np.zeros(3)
        n[i] = np.sign(p[i]) if p[i] != 0 else 1.0
    else:  # capsule
        hl = shape.params[1]
        q = np.array([0.0, 0.0, np.clip(p[2], -hl, hl)])
        n = p - q
    nn = np.linalg.norm(n)
    return R @ (n / nn if nn > 1e-12 else np.array([0.0, 0.0, 1.0]))


def _composite_exit_points(o, d, obj: ObjectSpec, obj_pose: Pose):
    """Entry/exit of the line x = o + t*d through the union of the shapes,
    for the connected component containing t = 0. Returns (p1, n1, p2, n2)."""
    intervals = []
    shapes_w = [(s, obj_pose.compose(s.local_offset)) for s in obj.shapes]
    for s, wp in shapes_w:
        hit = _shape_interval(o, d, s, wp)
        if hit is not None and hit[1] > hit[0]:
            intervals.append((hit[0], hit[1], s, wp))
    if not intervals:
        return None
    intervals.sort(key=lambda iv: iv[0])
    # merge overlapping intervals, tracking which shape bounds each edge
    merged = []
    for iv in intervals:
        if merged and iv[0] <= merged[-1][1] + 1e-9:
            if iv[1] > merged[-1][1]:
                merged[-1] = (merged[-1][0], iv[1], merged[-1][2], (iv[2], iv[3]))
        else:
            merged.append((iv[0], iv[1], (iv[2], iv[3]), (iv[2], iv[3])))
    for t0, t1, lo_shape, hi_shape in merged:
        if t0 <= 0.0 <= t1:
            p1 = o + t0 * d
            p2 = o + t1 * d
            n1 = _surface_normal(p1, lo_shape[0], lo_shape[1])
            n2 = _surface_normal(p2, hi_shape[0], hi_shape[1])
            return p1, n1, p2, n2
    return None


# ----------------------------------------------------------- cone predicate


def friction_cone_accept(
    p1: np.ndarray,
    n1: np.ndarray,
    p2: np.ndarray,
    n2: np.ndarray,
    mu: float,
    max_width: float = MAX_OPENING - GRASP_WIDTH_CLEARANCE,
) -> tuple[bool, float]:
    """Antipodal acceptance: both outward normals within the friction cone of
    the grasp axis and the pair fits in the gripper.

    Returns (accepted, quality) with quality = min cone margin in radians
    (negative when rejected by the cone test).
    """
    axis = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    width = float(np.linalg.norm(axis))
    if width < 1e-9 or width > max_width:
        return False, -np.inf
    a = axis / width
    cone = np.arctan(mu)
    ang1 = np.arccos(np.clip(np.dot(a, -np.asarray(n1)), -1.0, 1.0))
    ang2 = np.arccos(np.clip(np.dot(-a, -np.asarray(n2)), -1.0, 1.0))
    margin = float(cone - max(ang1, ang2))
    return margin >= 0.0, margin


# --------------------------------------------------------- stable placement


_CANDIDATE_BATTERY = None


def _candidate_orientations() -> list[np.ndarray]:
    global _CANDIDATE_BATTERY
    if _CANDIDATE_BATTERY is None:
        quats = []
        x = np.array([1.0, 0.0, 0.0])
        y = np.array([0.0, 1.0, 0.0])
        for k in range(8):
            quats.append(quat_from_axis_angle(x, k * np.pi / 4))
        for k in range(1, 8):
            if k == 4:
                continue
            quats.append(quat_from_axis_angle(y, k * np.pi / 4))
        _CANDIDATE_BATTERY = quats
    return _CANDIDATE_BATTERY


def _support_drop(shape, local: Pose, q) -> float:
    """Lowest point (z) of a shape when the body sits at orientation q, origin z=0."""
    world = Pose(np.zeros(3), q).compose(local)
    if shape.kind == "sphere":
        return world.position[2] - shape.params[0]
    if shape.kind == "capsule":
        u = world.rotation_matrix()[:, 2]
        return world.position[2] - abs(u[2]) * shape.params[1] - shape.params[0]
    R = world.rotation_matrix()
    drop = np.abs(R[2, :]) @ shape.params
    return world.position[2] - drop


def stable_orientations(obj: ObjectSpec, sim: SimParams | None = None, settle_time: float = 2.0) -> list[StablePose]:
    """Drop-simulate a battery of candidate orientations; keep the settled ones.

    Settled means kinetic energy < 1e-6 J before the time budget runs out.
    Results are deduplicated within 5 degrees.
    """
    sim = sim or SimParams()
    found: list[StablePose] = []
    for q in _candidate_orientations():
        lowest = min(_support_drop(s, s.local_offset, q) for s in obj.shapes)
        start = Pose(np.array([0.0, 0.0, -lowest + 0.02]), q)
        world = World(sim)
        world.add_ground(friction=0.8)
        bid = world.add_body(obj.build_body(start))
        settled = False
        steps = int(round(settle_time / 0.1))
        for _ in range(steps):
            world.advance(0.1)
            if world.kinetic_energy(bid) < 1e-6:
                settled = True
                break
        if not settled or abs(world.body_pos[bid][0]) > 0.5 or abs(world.body_pos[bid][1]) > 0.5:
            continue
        pose = world.body_pose(bid)
        if any(quat_angle(pose.orientation, f.orientation) < np.deg2rad(5.0) for f in found):
            continue
        found.append(StablePose(pose.orientation, float(pose.position[2])))
    if not found:
        raise ConfigurationError(f"no stable orientation found for {obj.name!r}")
    return found


# ------------------------------------------------------------ grasp sampler


def _object_aabb(obj: ObjectSpec, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for s in obj.shapes:
        w = pose.compose(s.local_offset)
        R = w.rotation_matrix()
        if s.kind == "sphere":
            e = np.full(3, s.params[0])
        elif s.kind == "cuboid":
            e = np.abs(R) @ s.params
        else:
            e = np.abs(R[:, 2]) * s.params[1] + s.params[0]
        lo = np.minimum(lo, w.position - e)
        hi = np.maximum(hi, w.position + e)
    return lo, hi


_FINGER_BOX_HALF = np.array([0.010, 0.0075, 0.016])


def _descent_collides(obj: ObjectSpec, obj_pose: Pose, tcp_pos, yaw: float, width: float) -> bool:
    """Would open fingers sweeping straight down to the grasp hit the object?"""
    closing = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
    q = quat_from_yaw(yaw)
    Rf = Pose(np.zeros(3), q).rotation_matrix()
    for side in (-1.0, 1.0):
        center0 = np.asarray(tcp_pos) + side * (width / 2 + 0.0075) * closing
        for dz in np.arange(0.004, 0.12, 0.008):
            c = center0 + np.array([0.0, 0.0, dz])
            for s in obj.shapes:
                w = s and obj_pose.compose(s.local_offset)
                pen = kernels.contact_query(
                    1,
                    _FINGER_BOX_HALF,
                    c,
                    Rf,
                    s.kind_code,
                    s.params,
                    w.position,
                    w.rotation_matrix(),
                )
                if pen > 5e-4:
                    return True
    return False


def sample_antipodal_grasps(
    obj: ObjectSpec,
    mu: float,
    n_samples: int,
    rng: np.random.Generator,
    resting: StablePose,
    keep: int = 50,
) -> list[GraspCandidate]:
    """Antipodal ray sampling on the object resting at the origin.

    Casts near-horizontal lines through random interior points, keeps pairs
    whose surface normals lie inside the friction cone of the grasp axis, fit
    within the gripper opening, clear the table, and admit a straight
    top-down approach. Sorted by descending quality.
    """
    if mu <= 0:
        raise ConfigurationError("mu must be positive")
    pose = Pose(np.array([0.0, 0.0, resting.height]), resting.orientation)
    lo, hi = _object_aabb(obj, pose)
    out: list[GraspCandidate] = []
    for _ in range(n_samples):
        p0 = rng.uniform(lo, hi)
        phi = rng.uniform(0.0, 2 * np.pi)
        tilt = rng.uniform(-TOPDOWN_TILT_MAX, TOPDOWN_TILT_MAX)
        d = np.array([np.cos(phi) * np.cos(tilt), np.sin(phi) * np.cos(tilt), np.sin(tilt)])
        hit = _composite_exit_points(p0, d, obj, pose)
        if hit is None:
            continue
        p1, n1, p2, n2 = hit
        ok, margin = friction_cone_accept(p1, n1, p2, n2, mu)
        if not ok:
            continue
        mid = 0.5 * (p1 + p2)
        tcp_z = float(mid[2])
        if tcp_z < MIN_GRASP_Z:
            continue
        width = float(np.linalg.norm(p2 - p1))
        axis = (p2 - p1) / width
        yaw = float(np.arctan2(-axis[0], axis[1]))
        tcp_pos = np.array([mid[0], mid[1], tcp_z])
        if _descent_collides(obj, pose, tcp_pos, yaw, width + DESCENT_EXTRA_OPEN):
            continue
        out.append(GraspCandidate(Pose(tcp_pos, quat_from_yaw(yaw)), width, margin))
    out.sort(key=lambda g: -g.quality)
    # light dedup on (position, yaw)
    dedup: list[GraspCandidate] = []
    for g in out:
        close = False
        for h in dedup:
            if (
                np.linalg.norm(g.tcp_pose.position - h.tcp_pose.position) < 0.005
                and abs(yaw_from_quat(g.tcp_pose.orientation) - yaw_from_quat(h.tcp_pose.orientation)) < 0.1
            ):
                close = True
                break
        if not close:
            dedup.append(g)
        if len(dedup) >= keep:
            break
    return dedup


# ------------------------------------------------------------- preparation


def prepare_objects(
    objects: list[ObjectSpec],
    sim: SimParams | None = None,
    cache_dir: str | None = None,
    n_samples: int = 4000,
    seed: int = 1234,
) -> list[ObjectSpec]:
    """Fill stable orientations and grasp candidate tables, using a JSON disk
    cache keyed by object geometry + physics config."""
    sim = sim or SimParams()
    for obj in objects:
        key = config_hash({"object": obj.geometry_key(), "sim": sim.to_dict(), "n_samples": n_samples, "seed": seed, "v": 3})
        cache_path = os.path.join(cache_dir, f"{obj.name}_{key}.json") if cache_dir else None
        if cache_path and os.path.exists(cache_path):
            with open(cache_path) as f:
                data = json.load(f)
            obj.stable_orientations = [StablePose.from_dict(d) for d in data["stable"]]
            obj.grasp_candidates = {
                int(k): [GraspCandidate.from_dict(g) for g in v] for k, v in data["candidates"].items()
            }
            continue
        obj.stable_orientations = stable_orientations(obj, sim)
        obj.grasp_candidates = {}
        rng = np.random.default_rng(seed)
        for i, sp in enumerate(obj.stable_orientations):
            obj.grasp_candidates[i] = sample_antipodal_grasps(obj, obj.friction, n_samples, rng, sp)
        if cache_path:
            os.makedirs(cache_dir, exist_ok=True)
            with open(cache_path, "w") as f:
                json.dump(
                    {
                        "stable": [sp.to_dict() for sp in obj.stable_orientations],
                        "candidates": {str(k): [g.to_dict() for g in v] for k, v in obj.grasp_candidates.items()},
                    },
                    f,
                )
    return objects


def candidates_in_world(env) -> list[GraspCandidate]:
    """The placed object's precomputed candidates, transformed to world frame."""
    placement = env.current_placement()
    obj = env.objects[placement["object_index"]]
    cands = obj.grasp_candidates.get(placement["orientation_index"], [])
    resting = obj.stable_orientations[placement["orientation_index"]]
    resting_pose = Pose(np.array([0.0, 0.0, resting.height]), resting.orientation)
    delta = placement["pose"].compose(resting_pose.inverse())
    dyaw = yaw_from_quat(delta.orientation)
    out = []
    for g in cands:
        pos = delta.transform_point(g.tcp_pose.position)
        yaw = yaw_from_quat(g.tcp_pose.orientation) + dyaw
        out.append(GraspCandidate(Pose(pos, quat_from_yaw(yaw)), g.width, g.quality))
    return out


# ------------------------------------------------------- scripted trajectory


def _yaw_nearest(target: float, current: float) -> float:
    """Equivalent grasp yaw (mod pi, two-finger symmetry) nearest to current."""
    best = target
    bestd = np.inf
    for k in (-2, -1, 0, 1, 2):
        cand = target + k * np.pi
        d = abs(np.arctan2(np.sin(cand - current), np.cos(cand - current)))
        if d < bestd:
            bestd = d
            best = current + np.arctan2(np.sin(cand - current), np.cos(cand - current))
    return best


def scripted_trajectory(grasp: GraspCandidate, env, squeeze: float = 0.0035) -> list:
    """Open-loop action sequence: move above the grasp, descend, close, hold.

    Actions stay within the per-step caps; raises InfeasibleDemoError when the
    approach cannot fit in the episode.
    """
    from .env import Action  # local import to avoid a cycle

    cfg = env.config
    T = cfg.T
    cmd = env.rig.cmd
    start = cmd.position.copy()
    yaw0 = cmd.yaw
    gp = grasp.tcp_pose.position
    gyaw = _yaw_nearest(yaw_from_quat(grasp.tcp_pose.orientation), yaw0)
    lo, hi = _object_aabb(
        env.objects[env.object_index], env._true_object_pose()
    )
    z_above = max(gp[2] + 0.05, hi[2] + 0.028)
    above = np.array([gp[0], gp[1], z_above])
    width_open = min(MAX_OPENING, grasp.width + DESCENT_EXTRA_OPEN)
    width_close = max(0.0, grasp.width - squeeze)

    d_above = above - start
    steps_a = max(
        5,
        int(np.ceil(np.abs(d_above / cfg.pos_step).max() - 1e-9)),
        int(np.ceil(abs(gyaw - yaw0) / cfg.yaw_step - 1e-9)),
    )
    steps_b = max(10, int(np.ceil((z_above - gp[2]) / cfg.pos_step - 1e-9)))
    steps_c = max(5, int(np.ceil((width_open - width_close) / (WIDTH_RATE * cfg.policy_dt) - 1e-9)))
    if steps_a + steps_b + steps_c > T:
        raise InfeasibleDemoError(
            f"approach needs {steps_a}+{steps_b}+{steps_c} steps but T={T}"
        )

    def width_action(w):
        return 2.0 * w / MAX_OPENING - 1.0

    actions = []
    pos = start.copy()
    yaw = yaw0
    for k in range(steps_a):
        f2 = (k + 1) / steps_a
        tgt = start + f2 * d_above
        tyaw = yaw0 + f2 * (gyaw - yaw0)
        actions.append(Action((tgt - pos) / cfg.pos_step, (tyaw - yaw) / cfg.yaw_step, width_action(width_open)))
        pos, yaw = tgt, tyaw
    for k in range(steps_b):
        f2 = (k + 1) / steps_b
        tz = z_above + f2 * (gp[2] - z_above)
        actions.append(Action(np.array([0.0, 0.0, (tz - pos[2]) / cfg.pos_step]), 0.0, width_action(width_open)))
        pos = np.array([pos[0], pos[1], tz])
    for _ in range(steps_c):
        actions.append(Action(np.zeros(3), 0.0, width_action(width_close)))
    while len(actions) < T:
        actions.append(Action(np.zeros(3), 0.0, width_action(width_close)))
    return actions


@dataclass
class DemoStats:
    episodes: int = 0
    transitions: int = 0
    successes: int = 0
    skipped: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def inject_demos(buffer, env_factory, count: int, rng: np.random.Generator | None = None, top_k: int | None = None) -> DemoStats:
    """Execute `count` scripted demonstration episodes and insert every
    transition; rewards and stability outcomes come from the real environment.
    Candidates are drawn uniformly from the whole precomputed table (pass
    top_k to restrict to the best ones). Infeasible placements are skipped
    and counted."""
    from .env import GraspEnv  # noqa: F401  (typing only)

    rng = rng or np.random.default_rng(0)
    stats = DemoStats()
    if count <= 0:
        return stats
    env = env_factory()
    for _ in range(count):
        obs = env.reset()
        cands = candidates_in_world(env)
        if not cands:
            stats.skipped += 1
            continue
        n_choice = len(cands) if top_k is None else min(top_k, len(cands))
        pick = cands[int(rng.integers(n_choice))]
        try:
            actions = scripted_trajectory(pick, env)
        except InfeasibleDemoError:
            stats.skipped += 1
            continue
        info = {}
        for act in actions:
            next_obs, reward, done, info = env.step(act)
            buffer.add(obs.flat, act.to_array(), reward, next_obs.flat, done)
            obs = next_obs
            stats.transitions += 1
        stats.episodes += 1
        stats.successes += int(bool(info.get("success")))
    return stats
