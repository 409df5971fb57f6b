"""Fingertip sensor geometry and tactile readout.

The fingertip is approximated by 50 primitives (45 cuboids + 5 spheres), each
sensing the net contact force on itself. Readings are reported in the finger's
local frame. Seven readout modes exist:

  E   nothing (no tactile channel)
  B   one binary touch flag per finger
  M   magnitude of the summed force vector per finger
  V   summed 3D force vector per finger
  BK  binary flag per taxel (K taxels)
  MK  force magnitude per taxel
  VK  3D force vector per taxel

Taxels group primitives: K=5 is the inner center line, K=9 extends it with
back-side sites, K=12 tiles the inner face densely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UnsupportedModeError
from .geometry import Pose, quat_from_axis_angle
from .physics.shapes import ShapePrimitive

N_PRIMITIVES = 50
MODE_KINDS = ("E", "B", "M", "V", "BK", "MK", "VK")
K_CHOICES = (5, 9, 12)

# fingertip parameterization at scale 1 (meters)
_WIDTH = 0.020  # x
_DEPTH = 0.015  # y, +y is the inner (grasping) face
_SHELL_HEIGHT = 0.026  # z extent of the cuboid shell; sphere cap adds 3 mm
_SHELL_T = 0.003
_SPHERE_R = 0.003
TIP_HEIGHT = _SHELL_HEIGHT / 2 + 2 * _SPHERE_R  # lowest sensor point below the body origin


@dataclass(frozen=True)
class TactileMode:
    """Readout mode; K is required for the per-taxel kinds."""

    kind: str
    K: int | None = None

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ConfigurationError(f"unknown tactile mode {self.kind!r}")
        if self.kind in ("BK", "MK", "VK"):
            if self.K is None:
                raise ConfigurationError(f"mode {self.kind} requires K")
        elif self.K is not None:
            raise ConfigurationError(f"mode {self.kind} does not take K")

    @property
    def per_finger_dim(self) -> int:
        if self.kind == "E":
            return 0
        if self.kind in ("B", "M"):
            return 1
        if self.kind == "V":
            return 3
        if self.kind == "BK":
            return self.K
        if self.kind == "MK":
            return self.K
        return 3 * self.K  # VK

    @property
    def dim(self) -> int:
        """Total observation width (both fingers)."""
        return 2 * self.per_finger_dim

    def __str__(self):
        return self.kind if self.K is None else f"{self.kind}{self.K}"

    @staticmethod
    def parse(spec: str) -> "TactileMode":
        spec = spec.strip()
        for kind in ("BK", "MK", "VK"):
            if spec.upper().startswith(kind):
                rest = spec[2:]
                return TactileMode(kind, int(rest) if rest else 5)
        if spec.upper() in ("E", "B", "M", "V"):
            return TactileMode(spec.upper())
        raise ConfigurationError(f"cannot parse tactile mode {spec!r}")


@dataclass
class SensorLayout:
    """50 primitives in the fingertip local frame plus taxel groupings."""

    primitives: list[ShapePrimitive]
    taxel_maps: dict[int, list[list[int]]]
    touch_threshold: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if len(self.primitives) != N_PRIMITIVES:
            raise ConfigurationError(f"fingertip needs exactly {N_PRIMITIVES} primitives")
        for K, groups in self.taxel_maps.items():
            if len(groups) != K:
                raise ConfigurationError(f"taxel map {K} has {len(groups)} groups")
            seen = set()
            for g in groups:
                for idx in g:
                    if idx in seen:
                        raise ConfigurationError(f"taxel map {K} reuses primitive {idx}")
                    seen.add(idx)

    def validate_mode(self, mode: TactileMode):
        if mode.kind in ("BK", "MK", "VK") and mode.K not in self.taxel_maps:
            raise ConfigurationError(f"layout has no taxel map for K={mode.K}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "scale": self.scale,
                "touch_threshold": self.touch_threshold,
                "taxel_maps": {str(k): v for k, v in self.taxel_maps.items()},
                "primitives": [p.to_dict() for p in self.primitives],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "SensorLayout":
        d = json.loads(text)
        return SensorLayout(
            primitives=[ShapePrimitive.from_dict(p) for p in d["primitives"]],
            taxel_maps={int(k): [list(map(int, g)) for g in v] for k, v in d["taxel_maps"].items()},
            touch_threshold=d["touch_threshold"],
            scale=d["scale"],
        )


@dataclass
class TactileFrame:
    """Per-finger readings for one policy step, finger local frame."""

    left: np.ndarray
    right: np.ndarray
    mode: TactileMode

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float).ravel()
        self.right = np.asarray(self.right, dtype=float).ravel()
        d = self.mode.per_finger_dim
        if len(self.left) != d or len(self.right) != d:
            raise ConfigurationError(
                f"mode {self.mode} expects {d} values per finger, got {len(self.left)}/{len(self.right)}"
            )

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.left, self.right])


def build_fingertip(scale: float = 1.0, touch_threshold: float = 0.1) -> SensorLayout:
    """Deterministic 50-primitive fingertip: 45 cuboids tile the inner, back,
    and side faces in 5 rows (plus a 5-cuboid chamfer at the inner tip edge);
    5 spheres cap the tip. All coordinates scale linearly."""
    if scale <= 0:
        raise ConfigurationError("scale must be positive")
    s = float(scale)
    prims: list[ShapePrimitive] = []
    half_w = _WIDTH / 2
    half_d = _DEPTH / 2
    half_h = _SHELL_HEIGHT / 2
    t2 = _SHELL_T / 2
    row_h = _SHELL_HEIGHT / 5
    row_z = [half_h - (r + 0.5) * row_h for r in range(5)]
    col_x = [-_WIDTH / 3, 0.0, _WIDTH / 3]

    def cub(pos, half, quat=None) -> ShapePrimitive:
        pose = Pose(np.asarray(pos) * s, quat if quat is not None else np.array([1.0, 0, 0, 0]))
        return ShapePrimitive.cuboid(np.asarray(half) * s, pose)

    # inner face (+y): 3 cols x 5 rows, row-major
    for z in row_z:
        for x in col_x:
            prims.append(cub([x, half_d - t2, z], [_WIDTH / 6, t2, row_h / 2]))
    # back face (-y)
    for z in row_z:
        for x in col_x:
            prims.append(cub([x, -(half_d - t2), z], [_WIDTH / 6, t2, row_h / 2]))
    # side columns (-x then +x)
    inner_depth = half_d - _SHELL_T
    for sx in (-1.0, 1.0):
        for z in row_z:
            prims.append(cub([sx * (half_w - t2), 0.0, z], [t2, inner_depth, row_h / 2]))
    # chamfer row rounding the inner-bottom edge, tilted 45 deg about x;
    # flush with the shell corner so the face taxels make first contact
    ch_q = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), -np.pi / 4)
    ch_y = 0.0047
    ch_z = -half_h + 0.0001
    for x in [-0.008, -0.004, 0.0, 0.004, 0.008]:
        prims.append(cub([x, ch_y, ch_z], [0.002, t2, 0.0018], ch_q))
    # sphere cap along the tip
    for x in [-0.007, -0.0035, 0.0, 0.0035, 0.007]:
        prims.append(
            ShapePrimitive.sphere(_SPHERE_R * s, Pose(np.array([x, 0.0, -half_h]) * s))
        )
    assert len(prims) == N_PRIMITIVES

    inner = lambda row, col: 3 * row + col  # noqa: E731
    back = lambda row, col: 15 + 3 * row + col  # noqa: E731
    k5 = [[inner(r, 1)] for r in range(5)]
    k9 = [[inner(r, 1)] for r in range(5)] + [[back(r, 1)] for r in range(1, 5)]
    k12 = []
    row_groups = [[0, 1], [2], [3], [4]]
    for g in row_groups:
        for c in range(3):
            k12.append([inner(r, c) for r in g])
    return SensorLayout(
        primitives=prims,
        taxel_maps={5: k5, 9: k9, 12: k12},
        touch_threshold=touch_threshold,
        scale=s,
    )


def read_tactile(
    forces_left: np.ndarray,
    forces_right: np.ndarray,
    mode: TactileMode,
    layout: SensorLayout,
    left_frame: Pose,
    right_frame: Pose,
) -> TactileFrame:
    """Aggregate per-primitive world-frame forces into one TactileFrame.

    forces_left / forces_right: (50, 3) net force on each primitive, world frame.
    Forces are first rotated into each finger's local frame.
    """
    layout.validate_mode(mode)
    fl = np.asarray(forces_left, dtype=float)
    fr = np.asarray(forces_right, dtype=float)
    if fl.shape != (N_PRIMITIVES, 3) or fr.shape != (N_PRIMITIVES, 3):
        raise ConfigurationError("expected (50, 3) force arrays per finger")
    out = []
    for forces, frame in ((fl, left_frame), (fr, right_frame)):
        local = forces @ frame.rotation_matrix()  # row-vector form of R^T f
        out.append(_aggregate(local, mode, layout))
    return TactileFrame(out[0], out[1], mode)


def _aggregate(local_forces: np.ndarray, mode: TactileMode, layout: SensorLayout) -> np.ndarray:
    thr = layout.touch_threshold
    if mode.kind == "E":
        return np.zeros(0)
    if mode.kind in ("B", "M", "V"):
        v = local_forces.sum(axis=0)
        if mode.kind == "V":
            return v
        m = np.linalg.norm(v)
        if mode.kind == "M":
            return np.array([m])
        return np.array([1.0 if m > thr else 0.0])
    groups = layout.taxel_maps[mode.K]
    vk = np.zeros((mode.K, 3))
    for k, g in enumerate(groups):
        if g:
            vk[k] = local_forces[g].sum(axis=0)
    if mode.kind == "VK":
        return vk.ravel()
    mk = np.linalg.norm(vk, axis=1)
    if mode.kind == "MK":
        return mk
    return (mk > thr).astype(float)


def touched(frame: TactileFrame, threshold: float | None = None) -> tuple[bool, bool]:
    """Per-finger touch booleans derived from the frame's own readings."""
    mode = frame.mode
    if mode.kind == "E":
        raise UnsupportedModeError("mode E carries no touch information; use contact lists")

    def one(v: np.ndarray) -> bool:
        if mode.kind == "B":
            return bool(v[0] >= 0.5)
        if mode.kind == "BK":
            return bool((v >= 0.5).any())
        thr = threshold if threshold is not None else 0.1
        if mode.kind == "M":
            return bool(v[0] > thr)
        if mode.kind == "V":
            return bool(np.linalg.norm(v) > thr)
        if mode.kind == "MK":
            return bool((v > thr).any())
        vk = v.reshape(mode.K, 3)
        return bool((np.linalg.norm(vk, axis=1) > thr).any())

    return one(frame.left), one(frame.right)
