"""The grasping MDP as a steppable environment.

Each episode: an object is placed on the table in a sampled stable
orientation, the floating gripper starts at a home pose above it, and the
policy commands per-step TCP deltas, a yaw delta, and a width target at
20 Hz for T steps. The terminal step runs the stability check and adds its
reward. Observations stack the last n frames of
[proprioception, (noised) object pose + one-hot, tactile, time].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolationError, SimulationDivergedError
from .geometry import Pose, quat_from_yaw, quat_multiply, quat_rotate, quat_conjugate, yaw_from_quat
from .gripper import GripperRig, MAX_OPENING
from .noise import NoiseConfig, apply_noise, ou_step, reset_noise
from .objects import ObjectSpec, standard_objects
from .physics.world import SimParams, World
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    approach_reward,
    force_alignment_reward,
    force_penalty,
    stability_check,
    success,
    touch_reward,
)
from .tactile import SensorLayout, TactileMode, build_fingertip, read_tactile

ACTION_DIM = 5  # dx, dy, dz, dyaw, width target


@dataclass
class Action:
    """Normalized action; every component lives in [-1, 1]."""

    delta_position: np.ndarray
    delta_yaw: float
    gripper_width_target: float

    @staticmethod
    def from_array(a: np.ndarray) -> "Action":
        a = np.clip(np.asarray(a, dtype=float).ravel(), -1.0, 1.0)
        if a.shape[0] != ACTION_DIM:
            raise ContractViolationError(f"action needs {ACTION_DIM} components, got {a.shape[0]}")
        return Action(a[:3].copy(), float(a[3]), float(a[4]))

    def to_array(self) -> np.ndarray:
        return np.concatenate([np.clip(self.delta_position, -1, 1), [np.clip(self.delta_yaw, -1, 1)], [np.clip(self.gripper_width_target, -1, 1)]])


@dataclass
class Observation:
    """Stacked observation: frames[0] is the oldest of the n memory frames."""

    frames: np.ndarray  # (n, frame_dim)
    layout: dict  # segment name -> (start, stop) within one frame

    @property
    def flat(self) -> np.ndarray:
        return self.frames.ravel()

    def segment(self, name: str, frame: int = -1) -> np.ndarray:
        a, b = self.layout[name]
        return self.frames[frame, a:b]

    @property
    def s_pp(self) -> np.ndarray:
        return self.segment("s_pp")

    @property
    def s_visual(self) -> np.ndarray:
        return self.segment("s_visual")

    @property
    def s_tactile(self) -> np.ndarray:
        return self.segment("s_tactile")

    @property
    def s_step(self) -> float:
        return float(self.segment("s_step")[0])


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    info: dict


@dataclass
class EnvConfig:
    T: int = 60
    policy_rate: float = 20.0
    memory: int = 5
    mode: TactileMode = field(default_factory=lambda: TactileMode("V"))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sim: SimParams = field(default_factory=SimParams)
    object_names: list[str] = field(default_factory=lambda: ["box", "can", "banana"])
    objects: list[ObjectSpec] | None = None  # filled by prepare_objects / factory
    workspace_radius: float = 0.25
    home_height: float = 0.30
    randomize_yaw: bool = True
    settle_time: float = 0.2
    pos_step: float = 0.02  # m per unit action component
    yaw_step: float = 0.1  # rad per unit action
    tcp_z_min: float = 0.012
    workspace_half: float = 0.35
    finger_friction: float = 1.0
    sensor_scale: float = 1.0

    def __post_init__(self):
        if self.T < 1 or self.memory < 1:
            raise ConfigurationError("need T >= 1 and memory >= 1")
        if isinstance(self.mode, str):
            self.mode = TactileMode.parse(self.mode)

    @property
    def policy_dt(self) -> float:
        return 1.0 / self.policy_rate

    @property
    def n_obj(self) -> int:
        return len(self.object_names)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "policy_rate": self.policy_rate,
            "memory": self.memory,
            "mode": str(self.mode),
            "noise": self.noise.to_dict(),
            "reward": self.reward.to_dict(),
            "sim": self.sim.to_dict(),
            "object_names": list(self.object_names),
            "workspace_radius": self.workspace_radius,
            "home_height": self.home_height,
            "randomize_yaw": self.randomize_yaw,
            "settle_time": self.settle_time,
            "pos_step": self.pos_step,
            "yaw_step": self.yaw_step,
            "tcp_z_min": self.tcp_z_min,
            "workspace_half": self.workspace_half,
            "finger_friction": self.finger_friction,
            "sensor_scale": self.sensor_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "EnvConfig":
        d = dict(d)
        d["mode"] = TactileMode.parse(d["mode"])
        d["noise"] = NoiseConfig.from_dict(d["noise"])
        d["reward"] = RewardConfig.from_dict(d["reward"])
        d["sim"] = SimParams.from_dict(d["sim"])
        return EnvConfig(**d)


def point_to_shape_distance(point: np.ndarray, shape, shape_world: Pose) -> float:
    """Distance from a world point to a primitive's surface (0 inside)."""
    p = shape_world.inverse_transform_point(point)
    if shape.kind == "sphere":
        return max(0.0, float(np.linalg.norm(p)) - shape.params[0])
    if shape.kind == "cuboid":
        d = np.abs(p) - shape.params
        return float(np.linalg.norm(np.maximum(d, 0.0)))
    if shape.kind == "capsule":
        r, hl = shape.params[0], shape.params[1]
        q = p.copy()
        q[2] = p[2] - np.clip(p[2], -hl, hl)
        return max(0.0, float(np.linalg.norm(q)) - r)
    if shape.kind == "halfplane":
        return max(0.0, float(p[2]))
    raise ConfigurationError(f"no distance routine for {shape.kind}")


class GraspEnv:
    """Single-episode-at-a-time grasping environment (gym-style step/reset)."""

    def __init__(self, config: EnvConfig, seed: int | np.random.SeedSequence = 0):
        self.config = config
        self.objects = config.objects if config.objects is not None else standard_objects(config.object_names)
        if len(self.objects) != len(config.object_names):
            raise ConfigurationError("objects and object_names disagree")
        for o in self.objects:
            o.require_prepared()
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        kids = ss.spawn(3)
        self.rng_placement = np.random.default_rng(kids[0])
        self.rng_noise = np.random.default_rng(kids[1])
        self.rng_stability = np.random.default_rng(kids[2])
        self.layout: SensorLayout = build_fingertip(config.sensor_scale, config.reward.f_touch)
        self.mode = config.mode
        self.layout.validate_mode(self.mode)
        self._frame_dim = 8 + 7 + config.n_obj + self.mode.dim + 1
        a = 0
        self._layout_map = {}
        for name, w in (("s_pp", 8), ("s_visual", 7 + config.n_obj), ("s_tactile", self.mode.dim), ("s_step", 1)):
            self._layout_map[name] = (a, a + w)
            a += w
        self.world: World | None = None
        self.rig: GripperRig | None = None
        self.object_id = -1
        self._done = True
        self._t = 0
        self._traj_file = None

    # -------------------------------------------------------------- metadata

    @property
    def action_dim(self) -> int:
        return ACTION_DIM

    @property
    def frame_dim(self) -> int:
        return self._frame_dim

    @property
    def observation_dim(self) -> int:
        return self._frame_dim * self.config.memory

    def observation_scale(self) -> np.ndarray:
        """Per-component scaling that normalizes one frame to O(1) values."""
        s = np.ones(self._frame_dim)
        a, b = self._layout_map["s_pp"]
        s[a : a + 3] = 1.0 / 0.3  # TCP position
        s[b - 1] = 1.0 / MAX_OPENING  # opening
        a, b = self._layout_map["s_visual"]
        s[a : a + 3] = 1.0 / 0.3  # object position
        a, b = self._layout_map["s_tactile"]
        if self.mode.kind in ("M", "V", "MK", "VK"):
            s[a:b] = 1.0 / 20.0  # forces in N
        return np.tile(s, self.config.memory)

    # ------------------------------------------------------------- lifecycle

    def reset(self) -> Observation:
        for attempt in range(3):
            try:
                return self._reset_once()
            except SimulationDivergedError:
                if attempt == 2:
                    raise
        raise AssertionError("unreachable")

    def _reset_once(self) -> Observation:
        cfg = self.config
        rng = self.rng_placement
        self.object_index = int(rng.integers(len(self.objects)))
        obj = self.objects[self.object_index]
        sp_idx = int(rng.integers(len(obj.stable_orientations)))
        self.orientation_index = sp_idx
        sp = obj.stable_orientations[sp_idx]
        yaw = rng.uniform(0.0, 2 * np.pi) if cfg.randomize_yaw else 0.0
        r = cfg.workspace_radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * np.pi)
        pos = np.array([r * np.cos(phi), r * np.sin(phi), sp.height + 0.001])
        quat = quat_multiply(quat_from_yaw(yaw), sp.orientation)

        self.world = World(cfg.sim)
        self.world.add_ground(friction=0.8)
        self.object_id = self.world.add_body(obj.build_body(Pose(pos, quat)))
        self.rig = GripperRig(
            self.world,
            self.layout,
            home=Pose(np.array([0.0, 0.0, cfg.home_height])),
            width=MAX_OPENING,
            friction=cfg.finger_friction,
        )
        self.rig.teleport(np.array([0.0, 0.0, cfg.home_height]), 0.0, MAX_OPENING)
        self.world.advance(cfg.settle_time)

        self._placement_yaw = yaw
        self._t = 0
        self._done = False
        self._episode_return = 0.0
        self.noise_state = reset_noise(self.rng_noise, cfg.noise, self._true_object_pose())
        self._prev_d = self._finger_distances()
        self._prev_f = (np.zeros(3), np.zeros(3))
        frame = self._build_frame()
        self._frames = np.tile(frame, (cfg.memory, 1))
        return self._observation()

    def step(self, action) -> tuple[Observation, float, bool, dict]:
        if self._done:
            raise ContractViolationError("episode is done; call reset()")
        cfg = self.config
        a = action.to_array() if isinstance(action, Action) else np.clip(np.asarray(action, dtype=float).ravel(), -1.0, 1.0)
        if a.shape[0] != ACTION_DIM:
            raise ContractViolationError(f"action needs {ACTION_DIM} components")
        cmd = self.rig.cmd
        pos = cmd.position + a[:3] * cfg.pos_step
        pos[0] = np.clip(pos[0], -cfg.workspace_half, cfg.workspace_half)
        pos[1] = np.clip(pos[1], -cfg.workspace_half, cfg.workspace_half)
        pos[2] = np.clip(pos[2], cfg.tcp_z_min, 0.5)
        yaw = cmd.yaw + a[3] * cfg.yaw_step
        yaw = float(np.arctan2(np.sin(yaw), np.cos(yaw)))
        width = (a[4] + 1.0) / 2.0 * MAX_OPENING
        self.rig.set_command(pos, yaw, width)
        self.rig.push_targets(cfg.policy_dt)
        self.world.advance(cfg.policy_dt)
        self._t += 1

        left_t, right_t = self.rig.fingers_touching(self.object_id, cfg.reward.f_touch)
        d_l, d_r = self._finger_distances(touching=(left_t, right_t))
        f_l, f_r = self.rig.finger_object_forces(self.object_id)
        breakdown = RewardBreakdown(
            touch=touch_reward(left_t, right_t, cfg.reward.w_touch),
            approach=approach_reward(d_l, d_r, self._prev_d[0], self._prev_d[1], cfg.reward.w_approach),
            force=force_alignment_reward(f_l, f_r, self._prev_f[0], self._prev_f[1], cfg.reward.f_touch, cfg.reward.w_force),
            penalty=force_penalty(f_l, f_r, cfg.reward.f_penalty, cfg.reward.w_penalty),
        )
        self._prev_d = (d_l, d_r)
        self._prev_f = (f_l, f_r)

        info: dict = {"t": self._t}
        done = False
        if self._t >= cfg.T:
            r_grasp, t_inhand = stability_check(
                self.world, self.rig, self.object_id, self.rng_stability, cfg.reward, cfg.policy_dt
            )
            breakdown.grasp = r_grasp
            info["t_inhand"] = t_inhand
            info["success"] = success(r_grasp, cfg.reward)
            done = True

        if cfg.noise.enable_ou:
            self.noise_state = ou_step(self.noise_state, self._true_object_pose(), cfg.noise, self.rng_noise)
        frame = self._build_frame()
        self._frames = np.concatenate([self._frames[1:], frame[None]], axis=0)

        reward = breakdown.total
        self._episode_return += reward
        self._done = done
        info["reward_breakdown"] = breakdown.as_dict()
        info["episode_return"] = self._episode_return
        obs = self._observation()
        if self._traj_file is not None:
            self._traj_file.write(
                json.dumps(
                    {
                        "t": self._t,
                        "action": a.tolist(),
                        "reward": reward,
                        "done": done,
                        "breakdown": breakdown.as_dict(),
                        "object_pose": self._true_object_pose().as_vector().tolist(),
                    }
                )
                + "\n"
            )
        return obs, float(reward), done, info

    def observe(self) -> Observation:
        return self._observation()

    # -------------------------------------------------------------- internals

    def _true_object_pose(self) -> Pose:
        return self.world.body_pose(self.object_id)

    def _observed_object_pose(self) -> Pose:
        true = self._true_object_pose()
        cfg = self.config
        if not (cfg.noise.enable_offset or cfg.noise.enable_ou):
            return true
        return apply_noise(true, self.noise_state, cfg.noise)

    def _finger_distances(self, touching: tuple[bool, bool] = (False, False)) -> tuple[float, float]:
        obj = self.objects[self.object_index]
        pose = self._true_object_pose()
        out = []
        for side, is_touching in zip(("left", "right"), touching):
            if is_touching:
                out.append(0.0)
                continue
            p = self.rig.grasp_point(side)
            dmin = np.inf
            for s in obj.shapes:
                world_shape = pose.compose(s.local_offset)
                dmin = min(dmin, point_to_shape_distance(p, s, world_shape))
            out.append(float(dmin))
        return out[0], out[1]

    def _build_frame(self) -> np.ndarray:
        cfg = self.config
        tcp = self.rig.tcp_pose()
        s_pp = np.concatenate([tcp.position, tcp.orientation, [self.rig.opening()]])
        obs_pose = self._observed_object_pose()
        obj = self.objects[self.object_index]
        s_visual = np.concatenate([obs_pose.position, obs_pose.orientation, obj.one_hot(self.object_index, cfg.n_obj)])
        if self.mode.kind == "E":
            s_tactile = np.zeros(0)
        else:
            fl, fr = self.rig.per_finger_forces()
            pl, pr = self.rig.finger_poses()
            s_tactile = read_tactile(fl, fr, self.mode, self.layout, pl, pr).flat
        s_step = np.array([(cfg.T - self._t) / cfg.T])
        return np.concatenate([s_pp, s_visual, s_tactile, s_step])

    def _observation(self) -> Observation:
        return Observation(frames=self._frames.copy(), layout=self._layout_map)

    # ------------------------------------------------------------ extra hooks

    def enable_trajectory_dump(self, path: str):
        self._traj_file = open(path, "w")

    def close(self):
        if self._traj_file is not None:
            self._traj_file.close()
            self._traj_file = None

    def current_placement(self) -> dict:
        """Ground-truth placement of the live episode (used by the demo scripter)."""
        return {
            "object_index": self.object_index,
            "orientation_index": self.orientation_index,
            "yaw": self._placement_yaw,
            "pose": self._true_object_pose(),
        }


class VectorEnv:
    """N independent environments stepped in lockstep.

    Results are elementwise identical to stepping each env sequentially with
    the same per-env seeds; a done slot auto-resets on the next step and marks
    info["episode_boundary"] (its action that step is ignored).
    """

    def __init__(self, config: EnvConfig, n_envs: int, seed: int = 0, workers: int = 0):
        if n_envs < 1:
            raise ConfigurationError("n_envs >= 1")
        kids = np.random.SeedSequence(seed).spawn(n_envs)
        self.envs = [GraspEnv(config, kid) for kid in kids]
        self.n_envs = n_envs
        self._needs_reset = [True] * n_envs
        self._pool = None
        if workers and workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            self._pool = ThreadPoolExecutor(max_workers=workers)

    def reset(self) -> list[Observation]:
        obs = self._map(lambda e: e.reset(), self.envs)
        self._needs_reset = [False] * self.n_envs
        return obs

    def step(self, actions) -> list[tuple[Observation, float, bool, dict]]:
        if len(actions) != self.n_envs:
            raise ContractViolationError(f"need {self.n_envs} actions, got {len(actions)}")

        def one(arg):
            env, act, needs_reset = arg
            if needs_reset:
                obs = env.reset()
                return obs, 0.0, False, {"episode_boundary": True, "t": 0}
            return env.step(act)

        results = self._map(one, list(zip(self.envs, actions, self._needs_reset)))
        self._needs_reset = [r[2] for r in results]
        return results

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def close(self):
        for e in self.envs:
            e.close()
        if self._pool is not None:
            self._pool.shutdown()
