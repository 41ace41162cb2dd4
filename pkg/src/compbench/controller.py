"""Cartesian compliance control via forward dynamics of a virtual model.

The controller turns a goal pose x_g, stiffness K, and goal wrench F_g into
joint position commands for the stiff inner servo:

    f_v  = K*pose_error(x_g, x_v) - D*xdot_v + (F_ext - F_g) + T_d*dF_ext/dt
    tau  = J(q_v)^T f_v
    qdd  = M_v(q_v)^-1 tau            (semi-implicit Euler on q_v, qd_v)

and the integrated virtual position q_v is the command. F_ext is the
measured environment-on-robot wrench; at rest the derivative term vanishes,
so statics reduce to the series spring balance F = K*k_wall*d/(K+k_wall).

M_v is the task-consistent virtual inertia J^T diag(m_cart, i_cart) J + eps*I,
i.e. the virtual model weighs m_cart kilograms in every Cartesian direction
at every configuration. A configuration-independent M_v looks simpler but
its Cartesian mass blows up wherever the pressing direction maps weakly to
joint torques (a radially pressing planar arm sees ~20x m_cart), leaving the
contact badly underdamped.

Targets are ingested latest-wins at the controller period (default 100 Hz);
the virtual model itself integrates every physics step with the freshest
wrench. Integrating at the slower period limit-cycles against stiff
contact — the 10 ms force sample aliases the contact-mode ring — which is
also why f_v takes the raw wrench, not the low-passed observation.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .config import ControllerConfig
from .geometry import Pose, StiffnessSpec, Wrench, pose_error, quat_from_matrix
from .kinematics import KinematicChain, fk_jac, forward_kinematics

STIFFNESS_MODES = {"low": 250.0, "mid": 500.0, "high": 750.0}


@dataclass(frozen=True)
class StiffnessMode:
    label: str

    def __post_init__(self):
        if self.label not in STIFFNESS_MODES:
            raise ValueError(f"unknown stiffness mode {self.label!r}; "
                             f"choose from {sorted(STIFFNESS_MODES)}")

    @property
    def value(self) -> float:
        return STIFFNESS_MODES[self.label]


def set_stiffness_mode(mode: StiffnessMode | str) -> StiffnessSpec:
    """Mode -> diagonal stiffness with the mode's scalar on all six entries."""
    label = mode.label if isinstance(mode, StiffnessMode) else mode
    return StiffnessSpec.diagonal(StiffnessMode(label).value)


@dataclass
class ControllerTarget:
    pose: Pose
    stiffness: StiffnessSpec
    f_g: Wrench = field(default_factory=Wrench)
    gripper: float | None = None        # None = hold current command

    def __post_init__(self):
        if self.gripper is not None:
            self.gripper = float(np.clip(self.gripper, 0.0, 1.0))


def _sqrtm_spd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return v @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ v.T


def critical_damping(k: StiffnessSpec, m_cart: float, i_cart: float) -> np.ndarray:
    """6x6 damping: D = 2*sqrt(K*m) per block (critically damped against a
    virtual Cartesian mass/inertia)."""
    d = np.zeros((6, 6))
    d[:3, :3] = 2.0 * _sqrtm_spd(k.translational * m_cart)
    d[3:, 3:] = 2.0 * _sqrtm_spd(k.rotational * i_cart)
    return d


class CartesianComplianceController:
    """One controller per arm. update_target may be called from another
    thread (teleop / policy); the loop applies targets atomically."""

    def __init__(self, chain: KinematicChain, cfg: ControllerConfig,
                 q0, stiffness: StiffnessSpec | None = None, now: float = 0.0,
                 gripper0: float = 1.0):
        self.chain = chain
        self.cfg = cfg
        self.q_v = chain.clamp(np.asarray(q0, dtype=float).copy())
        self.qd_v = np.zeros(chain.n)
        k0 = stiffness if stiffness is not None else set_stiffness_mode("mid")
        self._slot: ControllerTarget | None = None
        self._slot_lock = threading.Lock()
        self._last_update = now
        self.active_pose = forward_kinematics(chain, self.q_v)
        self.active_k = k0.copy()
        self._target_k = k0.copy()
        self._refresh_gains()
        self._lam = np.concatenate([np.full(3, cfg.m_cart),
                                    np.full(3, cfg.i_cart)])
        self._reg = 1e-3 * cfg.m_virtual * np.eye(chain.n)
        self.active_f_g = np.zeros(6)
        self.gripper_cmd = float(np.clip(gripper0, 0.0, 1.0))
        self._f_prev = np.zeros(6)
        self._t = 0.0                   # integrated controller time
        self._contact_until = -1.0
        self._contact_normal = np.zeros(3)
        self.stale = False
        self.singular = False
        self.diagnostics_sink = None    # callable(dict) or None

    # --- target path ---------------------------------------------------------

    def update_target(self, target: ControllerTarget, now: float):
        """Latest-wins: stale targets are discarded, never queued."""
        with self._slot_lock:
            self._slot = target
            self._last_update = now

    def ingest(self, now: float):
        """Pull the newest target; called once per controller period."""
        with self._slot_lock:
            target, last = self._slot, self._last_update
            self._slot = None
        if target is not None:
            self.active_pose = target.pose
            self._target_k = target.stiffness
            self.active_f_g = target.f_g.as_array()
            if target.gripper is not None:
                self.gripper_cmd = target.gripper
        self._slew_stiffness()
        self.stale = (now - last) > self.cfg.watchdog
        if self.diagnostics_sink is not None:
            x_v = forward_kinematics(self.chain, self.q_v)
            err = pose_error(self.active_pose, x_v).as_array()
            self.diagnostics_sink({
                "t": now,
                "pose_err": float(np.linalg.norm(err[:3])),
                "rot_err": float(np.linalg.norm(err[3:])),
                "k_diag": self.active_k.diag().tolist(),
                "f_meas": self._f_prev.tolist(),
                "stale": self.stale,
                "singular": self.singular,
            })

    def _slew_stiffness(self):
        """Move active K toward the target along the straight line between
        them (stays SPD), at most `stiffness_slew` per period elementwise."""
        for cur, tgt in ((self.active_k.translational, self._target_k.translational),
                         (self.active_k.rotational, self._target_k.rotational)):
            diff = tgt - cur
            m = np.abs(diff).max()
            if m <= 1e-12:
                cur[:] = tgt
            else:
                cur += min(1.0, self.cfg.stiffness_slew / m) * diff
        self._refresh_gains()

    def _refresh_gains(self):
        """Rebuild the cached block gain matrices from the active stiffness."""
        k6 = np.zeros((6, 6))
        k6[:3, :3] = self.active_k.translational
        k6[3:, 3:] = self.active_k.rotational
        self._k6 = k6
        self._d6 = critical_damping(self.active_k, self.cfg.m_cart,
                                    self.cfg.i_cart)

    # --- control loop --------------------------------------------------------

    def step(self, f_ext: np.ndarray, dt: float) -> np.ndarray:
        """One physics-rate integration step of the virtual model.
        f_ext: world-frame environment-on-robot wrench (raw)."""
        f_ext = np.asarray(f_ext, dtype=float)
        p_v, r_v, j = fk_jac(self.chain, self.q_v)
        x_v = Pose(p_v, quat_from_matrix(r_v))
        xd_v = j @ self.qd_v

        err = pose_error(self.active_pose, x_v).as_array()
        k6, d6 = self._k6, self._d6

        df = (f_ext - self._f_prev) / dt
        self._f_prev = f_ext.copy()
        # the derivative term damps sustained contact; clamp it so the jump
        # at contact onset cannot hammer the virtual model back elastically
        d_term = np.clip(self.cfg.t_d * df, -self.cfg.t_d_clamp,
                         self.cfg.t_d_clamp)
        f_v = k6 @ err - d6 @ xd_v + (f_ext - self.active_f_g) + d_term

        # contact damping injection: the measured force arrives one servo
        # settling-time late, which is ~90 deg of phase at the contact-mode
        # frequency — the force path alone cannot damp the bounce. Damping
        # the (undelayed) virtual velocity along the contact normal can.
        # Held briefly past loss of contact so micro-bounces stay damped;
        # normal-only so tangential strokes (wiping) feel no phantom drag.
        self._t += dt
        f_lin = f_ext[:3]
        f_mag = np.linalg.norm(f_lin)
        if f_mag > self.cfg.contact_eps:
            self._contact_normal = f_lin / f_mag
            self._contact_until = self._t + self.cfg.contact_hold
        if self._t <= self._contact_until:
            n = self._contact_normal
            f_v[:3] -= self.cfg.contact_damping * float(n @ xd_v[:3]) * n

        tau = j.T @ f_v
        m_v = (j.T * self._lam) @ j + self._reg
        qdd = np.linalg.solve(m_v, tau)

        sigma_min = np.linalg.svd(j, compute_uv=False).min()
        self.singular = sigma_min < self.cfg.sigma_min
        if self.singular:
            qdd = qdd - 100.0 * self.qd_v

        self.qd_v = self.qd_v + qdd * dt
        self.q_v = self.q_v + self.qd_v * dt
        clamped = (self.q_v < self.chain.lower) | (self.q_v > self.chain.upper)
        self.q_v = self.chain.clamp(self.q_v)
        self.qd_v[clamped] = 0.0
        return self.q_v.copy()

    def hold_target(self) -> ControllerTarget:
        """The currently active target (used to freeze on disconnect)."""
        return ControllerTarget(self.active_pose, self._target_k,
                                Wrench.from_array(self.active_f_g),
                                self.gripper_cmd)
