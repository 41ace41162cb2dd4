"""Workbench configuration: nested dataclasses with JSON-file overrides.

A config file is a JSON object mirroring the dataclass tree; only the keys
present are overridden. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    physics_dt: float = 1e-3          # s
    servo_kp: float = 1e5             # N*m/rad, stiff inner joint servo
    servo_kd: float | None = None     # default 2*sqrt(kp*m_joint)
    m_joint: float = 1.0              # kg*m^2, per-joint inertia
    k_wall: float = 1e5               # N/m, penalty contact stiffness
    d_wall: float = 100.0             # N*s/m, penalty contact damping
    gravity: bool = False             # adds a tool-weight wrench when on
    tool_mass: float = 0.5            # kg, used only under gravity
    gripper_rate: float = 2.0         # opening fraction per second
    grasp_range: float = 0.01         # m, proximity-attach distance
    ft_filter_hz: float = 10.0        # one-pole low-pass for observed F/T

    @property
    def kd(self) -> float:
        if self.servo_kd is not None:
            return self.servo_kd
        return 2.0 * (self.servo_kp * self.m_joint) ** 0.5


@dataclass
class ControllerConfig:
    period: float = 0.01              # s, target-ingest period (100 Hz)
    m_cart: float = 1.0               # kg, virtual mass for damping design
    i_cart: float = 1.0               # kg*m^2, rotational analog
    m_virtual: float = 1.0            # kg*m^2, virtual joint-space inertia
    t_d: float = 0.005                # s, force-derivative feedback gain
    t_d_clamp: float = 25.0           # N / N*m cap on the derivative term
    contact_damping: float = 400.0    # N*s/m on virtual velocity along the
    contact_eps: float = 0.5          # contact normal while force > eps,
    contact_hold: float = 0.05        # held this many s past the last touch
    stiffness_slew: float = 50.0      # stiffness units per period
    watchdog: float = 0.5             # s without a target -> hold + flag
    sigma_min: float = 1e-4           # singular-configuration guard


@dataclass
class TeleopConfig:
    motion_scale: float = 1.0
    haptic_max_force: float = 20.0    # N at full vibration intensity
    stale_input_ms: float = 200.0
    input_rate: float = 90.0          # Hz, client-side sampling
    state_rate: float = 30.0          # Hz, server state stream


@dataclass
class RecordConfig:
    rate: float = 20.0                # Hz
    image_size: tuple[int, int] = (64, 64)


@dataclass
class PolicyConfig:
    chunk_size: int = 20
    latent_dim: int = 32
    kl_weight: float = 10.0           # beta
    ensemble_coeff: float = 0.01      # m in w_i ~ exp(-m*i)
    width: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    use_ft: bool = True
    lr: float = 1e-4
    epochs: int = 2000
    batch_size: int = 64
    samples_per_epoch: int = 128      # draws per epoch; dataset size if 0
    checkpoint_every: int = 500
    torch_threads: int = 4


@dataclass
class TaskConfig:
    yaw_range: float = 0.2617993877991494   # rad, +/-15 deg
    position_range: float = 0.05             # m, +/-5 cm
    peg_clearance: float = 0.002             # m
    horizon: float = 8.0                     # s


@dataclass
class ChainConfig:
    kind: str = "planar3"             # planar3 | sixdof
    separation: float = 0.5           # bimanual base spacing


@dataclass
class WorkbenchConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)
    record: RecordConfig = field(default_factory=RecordConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _apply_overrides(obj, overrides: dict, path: str = ""):
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path + key!r} expects an object")
            _apply_overrides(current, value, path + key + ".")
        else:
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            setattr(obj, key, value)


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> WorkbenchConfig:
    """Defaults, then JSON file, then explicit overrides."""
    cfg = WorkbenchConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        _apply_overrides(cfg, data)
    if overrides:
        _apply_overrides(cfg, overrides)
    return cfg
