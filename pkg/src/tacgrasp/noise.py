"""Perception noise on the observed object pose.

Two channels compose: a per-episode constant offset (calibration bias) and a
per-step mean-reverting Ornstein-Uhlenbeck tracker (vision jitter). Both act
on a 6-vector pose parameterization [position (m), rotation-vector (rad)] and
never touch the simulated world, only the observation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError
from .geometry import Pose, quat_from_rotvec, quat_multiply, quat_normalize, rotvec_from_quat


@dataclass
class NoiseConfig:
    theta_off: float = 0.0  # offset magnitude scale (m and rad)
    theta_ou: float = 4.0  # OU mean-reversion rate, 1/s
    sigma_ou: float = 0.0  # OU diffusion scale, unit/sqrt(s)
    dt: float = 0.05  # observation period, s
    enable_offset: bool = False
    enable_ou: bool = False

    def __post_init__(self):
        if self.theta_ou < 0 or self.sigma_ou < 0 or self.dt <= 0:
            raise ConfigurationError("need theta_ou >= 0, sigma_ou >= 0, dt > 0")

    @staticmethod
    def from_levels(ou_level: float = 0.0, offset_level: float = 0.0, dt: float = 0.05) -> "NoiseConfig":
        """Map scalar noise levels (0, 0.3, 0.6, ...) onto concrete parameters.

        OU level L gives sigma_ou = 0.05*L with theta_ou = 4/s, i.e. a
        stationary std of about L*1.8 cm; offset level is theta_off directly.
        """
        return NoiseConfig(
            theta_off=float(offset_level),
            theta_ou=4.0,
            sigma_ou=0.05 * float(ou_level),
            dt=dt,
            enable_offset=offset_level > 0,
            enable_ou=ou_level > 0,
        )

    def to_dict(self) -> dict:
        return {
            "theta_off": self.theta_off,
            "theta_ou": self.theta_ou,
            "sigma_ou": self.sigma_ou,
            "dt": self.dt,
            "enable_offset": self.enable_offset,
            "enable_ou": self.enable_ou,
        }

    @staticmethod
    def from_dict(d: dict) -> "NoiseConfig":
        return NoiseConfig(**d)


@dataclass
class PoseNoiseState:
    """offset_sample is frozen for the episode; ou_state tracks the true pose."""

    offset_sample: np.ndarray
    ou_state: np.ndarray

    def __post_init__(self):
        self.offset_sample = np.asarray(self.offset_sample, dtype=float).copy()
        self.ou_state = np.asarray(self.ou_state, dtype=float).copy()


def reset_noise(rng: np.random.Generator, config: NoiseConfig, true_pose: Pose) -> PoseNoiseState:
    """Draw the per-episode offset and seat the OU tracker on the true pose."""
    offset = config.theta_off * rng.uniform(-1.0, 1.0, size=6)
    return PoseNoiseState(offset_sample=offset, ou_state=true_pose.to_6vec())


def _continuous_6vec(pose: Pose, reference: np.ndarray) -> np.ndarray:
    """Pose 6-vector with the rotation-vector branch nearest to `reference`."""
    v = pose.to_6vec()
    r = v[3:6]
    ang = np.linalg.norm(r)
    if ang > 1e-9:
        axis = r / ang
        best = r
        best_d = np.linalg.norm(r - reference[3:6])
        for k in (-1, 1):
            cand = axis * (ang + 2.0 * np.pi * k)
            d = np.linalg.norm(cand - reference[3:6])
            if d < best_d:
                best, best_d = cand, d
        v[3:6] = best
    return v


def ou_step(state: PoseNoiseState, true_pose: Pose, config: NoiseConfig, rng: np.random.Generator) -> PoseNoiseState:
    """X <- X + theta*(mu - X)*dt + sigma*sqrt(dt)*z, z ~ N(0, I)."""
    mu = _continuous_6vec(true_pose, state.ou_state)
    z = rng.standard_normal(6)
    x = state.ou_state + config.theta_ou * (mu - state.ou_state) * config.dt + config.sigma_ou * np.sqrt(config.dt) * z
    return PoseNoiseState(offset_sample=state.offset_sample, ou_state=x)


def ou_path(x0: np.ndarray, mu: np.ndarray, config: NoiseConfig, rng: np.random.Generator, n_steps: int) -> np.ndarray:
    """Vectorized n-step OU rollout with a fixed target; returns (n_steps, d).

    Same recursion as `ou_step` iterated, evaluated with a linear filter.
    """
    x0 = np.asarray(x0, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = x0.shape[0]
    a = 1.0 - config.theta_ou * config.dt
    g = config.sigma_ou * np.sqrt(config.dt)
    z = rng.standard_normal((n_steps, d))
    drive = config.theta_ou * config.dt * mu[None, :] + g * z
    out = np.empty((n_steps, d))
    for j in range(d):
        zi = [a * x0[j]]
        out[:, j] = lfilter([1.0], [1.0, -a], drive[:, j], zi=zi)[0]
    return out


def apply_noise(true_pose: Pose, state: PoseNoiseState, config: NoiseConfig) -> Pose:
    """Observed pose: OU-tracked pose (if enabled) composed with the offset.

    Position error adds; orientation errors apply as rotation-vector
    exponentials pre-multiplying the true orientation.
    """
    pos = true_pose.position.copy()
    rot_err = np.zeros(3)
    if config.enable_ou:
        mu = _continuous_6vec(true_pose, state.ou_state)
        pos = pos + (state.ou_state[:3] - mu[:3])
        rot_err = rot_err + (state.ou_state[3:6] - mu[3:6])
    if config.enable_offset:
        pos = pos + state.offset_sample[:3]
        rot_err = rot_err + state.offset_sample[3:6]
    q = quat_multiply(quat_from_rotvec(rot_err), true_pose.orientation)
    return Pose(pos, quat_normalize(q))
