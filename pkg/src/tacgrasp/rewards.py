"""Per-step auxiliary rewards, the terminal stability check, and the success
predicate.

The terminal reward dominates by construction: the stability check returns up
to `grasp_scale` (default 1000) while a single step's auxiliary terms are
bounded by ~22 under the default weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .gripper import GripperRig
from .physics.world import World


@dataclass
class StabilityConfig:
    lift_height: float = 0.15  # m
    lift_duration: float = 1.0  # s
    t_total: float = 3.0  # s, perturb-and-hold phase; t_inhand accrues here
    perturb_force_max: float = 2.0  # N
    perturb_interval: float = 0.5  # s


@dataclass
class RewardConfig:
    w_touch: float = 10.0
    w_approach: float = 10.0
    w_force: float = 1.0
    w_penalty: float = 1.0
    f_penalty: float = 15.0  # N, grip force where the penalty starts
    f_touch: float = 0.1  # N, contact threshold shared with the tactile model
    grasp_scale: float = 1000.0
    success_fraction: float = 0.95  # of t_total required for success
    stability: StabilityConfig = field(default_factory=StabilityConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "RewardConfig":
        d = dict(d)
        stab = d.pop("stability", {})
        return RewardConfig(stability=StabilityConfig(**stab), **d)


@dataclass
class RewardBreakdown:
    touch: float = 0.0
    approach: float = 0.0
    force: float = 0.0
    penalty: float = 0.0
    grasp: float = 0.0

    @property
    def total(self) -> float:
        return self.touch + self.approach + self.force + self.penalty + self.grasp

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def touch_reward(left_touched: bool, right_touched: bool, w: float = 10.0) -> float:
    """0 when both fingers are in contact, else -w."""
    return 0.0 if (left_touched and right_touched) else -w


def approach_reward(d_l_t: float, d_r_t: float, d_l_prev: float, d_r_prev: float, w: float = 10.0) -> float:
    """Positive when the summed fingertip-to-object distance shrinks."""
    return w * ((d_l_prev + d_r_prev) - (d_l_t + d_r_t))


def _antipodal_cos(f_l: np.ndarray, f_r: np.ndarray, f_touch: float) -> float:
    nl = np.linalg.norm(f_l)
    nr = np.linalg.norm(f_r)
    if nl <= f_touch or nr <= f_touch:
        return 0.0
    return float(np.dot(f_l, -np.asarray(f_r)) / (nl * nr))


def force_alignment_reward(
    f_l_t: np.ndarray,
    f_r_t: np.ndarray,
    f_l_prev: np.ndarray,
    f_r_prev: np.ndarray,
    f_touch: float = 0.1,
    w: float = 1.0,
) -> float:
    """Change in antipodal alignment of the two finger forces.

    Alignment is the cosine between f_l and -f_r, gated to 0 unless both
    fingers push harder than f_touch.
    """
    return w * (_antipodal_cos(f_l_t, f_r_t, f_touch) - _antipodal_cos(f_l_prev, f_r_prev, f_touch))


def force_penalty(f_l: np.ndarray, f_r: np.ndarray, f_penalty: float, w: float = 1.0) -> float:
    """Smooth penalty for squeezing: 0 up to f_penalty, -w at f_penalty + 3*f_penalty."""
    f_max = 3.0 * f_penalty
    x = np.clip(max(np.linalg.norm(f_l), np.linalg.norm(f_r)) - f_penalty, 0.0, f_max) / f_max
    g = lambda v: 1.0 - np.exp(-v)  # noqa: E731
    return float(-w * g(x) / g(1.0))


def success(r_grasp: float, config: RewardConfig | None = None) -> bool:
    cfg = config or RewardConfig()
    return r_grasp >= cfg.grasp_scale * cfg.success_fraction


def stability_check(
    world: World,
    rig: GripperRig,
    object_id: int,
    rng: np.random.Generator,
    config: RewardConfig,
    policy_dt: float = 0.05,
) -> tuple[float, float]:
    """Scripted lift-perturb-hold procedure converting a grasp into r_grasp.

    Keeps the gripper width command frozen, raises the TCP by lift_height over
    lift_duration, then for t_total applies a random force pulse at the object
    COM every perturb_interval. t_inhand accrues over the perturb-and-hold
    phase whenever both fingers stay in contact with the object.
    Deterministic for a fixed rng.
    """
    if object_id < 0 or object_id >= world.n_bodies:
        raise KeyError(f"object id {object_id} not in world")
    stab = config.stability
    cmd = rig.cmd
    n_lift = max(1, int(round(stab.lift_duration / policy_dt)))
    dz = stab.lift_height / n_lift
    pos = cmd.position.copy()
    for _ in range(n_lift):
        pos[2] += dz
        rig.set_command(pos, cmd.yaw, cmd.width)
        rig.push_targets(policy_dt)
        world.advance(policy_dt)

    n_hold = max(1, int(round(stab.t_total / policy_dt)))
    every = max(1, int(round(stab.perturb_interval / policy_dt)))
    t_inhand = 0.0
    for i in range(n_hold):
        if i % every == 0:
            direction = rng.standard_normal(3)
            n = np.linalg.norm(direction)
            direction = direction / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
            magnitude = rng.uniform(0.0, stab.perturb_force_max)
            world.set_external_force(object_id, magnitude * direction)
        else:
            world.set_external_force(object_id, np.zeros(3))
        rig.push_targets(policy_dt)
        world.advance(policy_dt)
        left, right = rig.fingers_touching(object_id, config.f_touch)
        if left and right:
            t_inhand += policy_dt
    world.clear_external_forces()
    r_grasp = config.grasp_scale * t_inhand / stab.t_total
    return float(r_grasp), float(t_inhand)
