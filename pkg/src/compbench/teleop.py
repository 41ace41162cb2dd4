"""Maps a tracked 6-DOF input device to robot targets.

Clutched relative mapping: while engaged, the device's motion since the
engage instant is replayed (scaled) onto the end-effector pose captured at
the same instant; disengaging freezes the last target, and re-engaging
re-references both sides so the target never jumps. Button edges toggle
the clutch (menu) and the task's stiffness-mode pair (grip).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TeleopConfig
from .geometry import Pose, Wrench, quat_conj, quat_mul

F_HAPTIC_MAX = 20.0     # N at saturation


def haptic_intensity(wrench: Wrench, f_max: float = F_HAPTIC_MAX) -> float:
    """Vibration command in [0, 1]: linear in force magnitude up to f_max."""
    return float(np.clip(np.linalg.norm(wrench.force) / f_max, 0.0, 1.0))


def trigger_to_gripper(t: float) -> float:
    """Trigger value is the desired opening fraction, clamped."""
    return float(np.clip(t, 0.0, 1.0))


@dataclass
class TeleopSession:
    """Per-arm mapping state between one input device and one controller."""

    arm_id: str
    mode_pair: tuple[str, str]          # (primary, alternate); contains mid
    cfg: TeleopConfig = field(default_factory=TeleopConfig)
    mode_index: int = 0
    clutch_engaged: bool = False
    controller_start: Pose | None = None
    ee_start: Pose | None = None
    last_target: Pose | None = None
    gripper: float = 1.0
    _last_seq: float = -np.inf
    _last_t_ms: float = -np.inf
    _menu_level: bool = False
    _grip_level: bool = False

    def __post_init__(self):
        if "mid" not in self.mode_pair:
            raise ValueError(f"mode pair {self.mode_pair} must contain mid")

    @property
    def mode(self) -> str:
        return self.mode_pair[self.mode_index]

    def engage_clutch(self, controller_pose: Pose, current_ee: Pose) -> None:
        """Reference both sides at this instant. The EE reference is the
        frozen last target when one exists (re-engaging is then seamless
        even if the arm sagged away from it under compliance)."""
        self.clutch_engaged = True
        self.controller_start = controller_pose.copy()
        self.ee_start = (self.last_target.copy() if self.last_target
                         else current_ee.copy())

    def disengage_clutch(self) -> None:
        self.clutch_engaged = False

    def toggle_clutch(self, controller_pose: Pose, current_ee: Pose) -> bool:
        if self.clutch_engaged:
            self.disengage_clutch()
        else:
            self.engage_clutch(controller_pose, current_ee)
        return self.clutch_engaged

    def map_controller_to_target(self, controller_pose: Pose) -> Pose | None:
        """Relative device motion onto the EE start pose; None if never
        clutched in. Disengaged: no-op, the frozen target."""
        if not self.clutch_engaged:
            return self.last_target
        scale = self.cfg.motion_scale
        pos = self.ee_start.position + scale * (
            controller_pose.position - self.controller_start.position)
        dq = quat_mul(controller_pose.orientation,
                      quat_conj(self.controller_start.orientation))
        target = Pose(pos, quat_mul(dq, self.ee_start.orientation))
        self.last_target = target
        return target

    def toggle_stiffness(self) -> str:
        self.mode_index ^= 1
        return self.mode

    def handle_input(self, msg: dict, current_ee: Pose,
                     now_ms: float | None = None) -> Pose | None:
        """Apply one validated input frame: stale/out-of-order frames are
        dropped, button edges fire the toggles, and the mapped target (or
        the frozen one) is returned."""
        if msg["seq"] <= self._last_seq:
            return self.last_target
        if now_ms is None:
            now_ms = max(self._last_t_ms, msg["t_ms"])
        if now_ms - msg["t_ms"] > self.cfg.stale_input_ms:
            return self.last_target
        self._last_seq = msg["seq"]
        self._last_t_ms = max(self._last_t_ms, msg["t_ms"])

        device = Pose(np.array(msg["pos"]), np.array(msg["quat"]))
        menu, grip = msg["buttons"]["menu"], msg["buttons"]["grip"]
        if menu and not self._menu_level:
            self.toggle_clutch(device, current_ee)
        if grip and not self._grip_level:
            self.toggle_stiffness()
        self._menu_level, self._grip_level = menu, grip

        self.gripper = trigger_to_gripper(msg["trigger"])
        return self.map_controller_to_target(device)
