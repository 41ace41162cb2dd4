"""Fixed-step simulation of one or two serial arms with penalty contact,
proximity grasping, and wrist force/torque sensing.

The arms are "rigid robots": a stiff inner joint PD servo tracks joint
position commands; all compliance lives in the outer controller. Wrenches
follow the environment-on-robot convention (a wall the EE presses into
pushes back along its outward normal).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .geometry import Pose, Twist, Wrench, quat_rotate, quat_to_matrix
from .kinematics import KinematicChain, fk_jac, forward_kinematics

GRAVITY = 9.81


class SimulationFault(RuntimeError):
    """Raised when the state goes non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class Surface:
    """Half-space solid: points with (p - point)·normal < 0 are inside."""

    name: str
    point: np.ndarray
    normal: np.ndarray
    color: tuple = (120, 120, 130)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        self.normal = n / np.linalg.norm(n)


@dataclass
class Body:
    """Free rigid body. Boxes have half-extent size (3,), cylinders
    (radius, half_height). Bodies are quasi-static: they move only while
    grasped (gravity acts on the arms, not on parked bodies)."""

    name: str
    pose: Pose
    shape: str = "box"                  # box | cylinder
    size: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.02]))
    width_fraction: float = 0.5         # gripper fraction at which grasp holds
    graspable: bool = True
    color: tuple = (200, 160, 60)

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float).ravel()

    def corner_points(self) -> np.ndarray:
        """World-frame sample points used for penalty contact."""
        if self.shape == "box":
            sx, sy, sz = self.size[:3]
            local = np.array([[x, y, z]
                              for x in (-sx, sx)
                              for y in (-sy, sy)
                              for z in (-sz, sz)])
        else:
            r, h = self.size[0], self.size[1]
            ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
            ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
            local = np.concatenate([
                np.column_stack([ring, np.full(8, -h)]),
                np.column_stack([ring, np.full(8, h)]),
                [[0, 0, -h], [0, 0, h]],
            ])
        rot = quat_to_matrix(self.pose.orientation)
        return self.pose.position + local @ rot.T


@dataclass
class HoleFixture:
    """Box body with a blind hole along its local +z, mouth at the top face.
    hole_r is the radius (round) or half-width (square)."""

    body: Body
    hole_shape: str = "round"           # round | square
    hole_r: float = 0.007
    hole_depth: float = 0.03

    def mouth_pose(self) -> Pose:
        return self.body.pose.compose(Pose([0, 0, self.body.size[2]]))


@dataclass
class MarkGrid:
    """Wipeable mark cells on a work surface."""

    centers: np.ndarray                 # (M, 3) world positions
    cell_size: float
    surface: str                        # name of the surface they sit on
    wiped: np.ndarray = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        if self.wiped is None:
            self.wiped = np.zeros(len(self.centers), dtype=bool)

    def fraction_wiped(self) -> float:
        return float(self.wiped.mean()) if len(self.wiped) else 0.0


@dataclass
class Arm:
    chain: KinematicChain
    q: np.ndarray
    qd: np.ndarray = None
    q_cmd: np.ndarray = None
    gripper: float = 1.0
    gripper_cmd: float = 1.0
    grasped: str | None = None
    grasp_rel: Pose | None = None       # body pose in EE frame while held
    f_ext: np.ndarray = None            # world wrench on robot at EE (raw)
    f_filt: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        if self.qd is None:
            self.qd = np.zeros_like(self.q)
        if self.q_cmd is None:
            self.q_cmd = self.q.copy()
        if self.f_ext is None:
            self.f_ext = np.zeros(6)
        if self.f_filt is None:
            self.f_filt = np.zeros(6)


@dataclass
class ArmObservation:
    ee_pose: Pose
    ee_twist: Twist
    wrench: Wrench                      # sensor frame, low-passed
    wrench_raw: Wrench                  # sensor frame, unfiltered
    gripper: float
    q: np.ndarray
    stiffness: object = None            # stamped by the runtime
    grasped: str | None = None


@dataclass
class Observation:
    time: float
    arms: dict
    images: list = None                 # filled when rendering is requested


class World:
    """Exclusively owned by one stepping context; observations are
    immutable snapshots."""

    def __init__(self, arms: dict, cfg: SimConfig, surfaces=None, bodies=None,
                 fixtures=None, marks: MarkGrid | None = None,
                 task: str = "", seed: int = 0):
        self.arms = arms
        self.cfg = cfg
        self.surfaces = list(surfaces or [])
        self.bodies = {b.name: b for b in (bodies or [])}
        self.fixtures = {f.body.name: f for f in (fixtures or [])}
        for f in self.fixtures.values():
            self.bodies.setdefault(f.body.name, f.body)
        self.marks = marks
        self.task = task
        self.seed = seed
        self.time = 0.0
        self.halted = False
        self.peak_force = 0.0           # running stats for success metrics
        self._force_sum = 0.0
        self._force_steps = 0
        # scratch: per-step (body, surface) -> normal force, for wiping
        self._pair_forces: dict = {}

    # --- kinematic helpers ---------------------------------------------------

    def ee_pose(self, arm_id: str) -> Pose:
        arm = self.arms[arm_id]
        return forward_kinematics(arm.chain, arm.q)

    def ee_twist(self, arm_id: str) -> np.ndarray:
        arm = self.arms[arm_id]
        return fk_jac(arm.chain, arm.q)[2] @ arm.qd

    def _kinematics(self) -> dict:
        """One fk_jac pass per arm: arm_id -> (p_ee, r_ee, J)."""
        return {arm_id: fk_jac(arm.chain, arm.q)
                for arm_id, arm in self.arms.items()}

    def body_velocity(self, name: str) -> np.ndarray:
        """6-vector world velocity of a body (zero unless grasped)."""
        for arm_id, arm in self.arms.items():
            if arm.grasped == name:
                return self.ee_twist(arm_id)
        return np.zeros(6)

    def _body_velocity(self, name: str, vel: dict) -> np.ndarray:
        for arm_id, arm in self.arms.items():
            if arm.grasped == name:
                return vel[arm_id]
        return np.zeros(6)

    def point_velocity(self, vel6: np.ndarray, ref: np.ndarray,
                       p: np.ndarray) -> np.ndarray:
        return vel6[:3] + np.cross(vel6[3:], p - ref)

    # --- contact model -------------------------------------------------------

    def _halfspace_force(self, p, v_p, surface: Surface):
        s = float((p - surface.point) @ surface.normal)
        if s >= 0.0:
            return None
        depth = -s
        rate = -float(v_p @ surface.normal)
        f = self.cfg.k_wall * depth + self.cfg.d_wall * rate
        if f <= 0.0:
            return None
        return f * surface.normal

    def _accumulate(self, wrench6, f, p, ref):
        wrench6[:3] += f
        wrench6[3:] += np.cross(p - ref, f)

    def _hole_contact(self, peg: Body, fixture: HoleFixture,
                      v_peg: np.ndarray, v_fix: np.ndarray):
        """Wrench on the peg from the fixture (world frame, about the peg
        tip); the fixture sees the reaction. Returns (force, point) or None."""
        mouth = fixture.mouth_pose()
        inv = mouth.inverse()
        if peg.shape == "cylinder":
            tip_local = np.array([0.0, 0.0, -peg.size[1]])
        else:
            tip_local = np.array([0.0, 0.0, -peg.size[2]])
        tip_w = peg.pose.transform_point(tip_local)
        p = inv.transform_point(tip_w)       # tip in mouth frame, z<0 = inside
        if p[2] >= 0.0:
            return None
        rot_m = quat_to_matrix(mouth.orientation)
        v_rel = (self.point_velocity(v_peg, peg.pose.position, tip_w)
                 - self.point_velocity(v_fix, fixture.body.pose.position, tip_w))
        v_local = rot_m.T @ v_rel

        if fixture.hole_shape == "round":
            if peg.shape == "cylinder":
                r_p = peg.size[0]
            else:
                r_p = float(np.hypot(peg.size[0], peg.size[1]))
            rho = float(np.hypot(p[0], p[1]))
            overlap = rho + r_p - fixture.hole_r
            radial = (np.array([p[0], p[1], 0.0]) / rho) if rho > 1e-12 else np.zeros(3)
            lateral_rate = float(v_local[:2] @ radial[:2])
        else:
            # square hole: use the peg's worst bottom corner in the mouth frame
            rot_p = quat_to_matrix(peg.pose.orientation)
            sx, sy, sz = peg.size[:3]
            corners = peg.pose.position + np.array(
                [[x, y, -sz] for x in (-sx, sx) for y in (-sy, sy)]) @ rot_p.T
            local = np.array([inv.transform_point(c) for c in corners])
            over = np.abs(local[:, :2]) - fixture.hole_r
            worst = np.unravel_index(np.argmax(over), over.shape)
            overlap = float(over[worst])
            axis = worst[1]
            sgn = np.sign(local[worst[0], axis]) or 1.0
            radial = np.zeros(3)
            radial[axis] = sgn
            lateral_rate = float(v_local[axis] * sgn)

        k, d = self.cfg.k_wall, self.cfg.d_wall
        if overlap <= 0.0:
            # aligned: free travel until the hole bottom
            bottom_pen = -(p[2] + fixture.hole_depth)
            if bottom_pen <= 0.0:
                return None
            f_n = max(k * bottom_pen + d * (-v_local[2]), 0.0)
            if f_n <= 0.0:
                return None
            f_world = rot_m @ np.array([0.0, 0.0, f_n])
            return f_world, tip_w
        if p[2] > -0.003:
            # misaligned at the mouth: the rim stops entry (capped depth so a
            # hard servo ram cannot blow the penalty force up unbounded)
            depth = min(-p[2], 0.003)
            f_n = max(k * depth + d * (-v_local[2]), 0.0)
            if f_n <= 0.0:
                return None
            f_world = rot_m @ np.array([0.0, 0.0, f_n])
            return f_world, tip_w
        # inside the hole, rubbing the wall: push back toward the axis
        f_l = max(k * overlap + d * lateral_rate, 0.0)
        if f_l <= 0.0:
            return None
        f_world = rot_m @ (-f_l * radial)
        return f_world, tip_w

    def compute_contacts(self, kin: dict | None = None) -> dict:
        """World-frame environment-on-robot wrench per arm, measured about
        the EE point. Also refreshes the per-(body, surface) force table."""
        if kin is None:
            kin = self._kinematics()
        wrenches = {arm_id: np.zeros(6) for arm_id in self.arms}
        self._pair_forces = {}
        ee = {arm_id: kin[arm_id][0] for arm_id in self.arms}
        vel = {arm_id: kin[arm_id][2] @ self.arms[arm_id].qd
               for arm_id in self.arms}

        holder = {arm.grasped: arm_id for arm_id, arm in self.arms.items()
                  if arm.grasped}

        for arm_id, arm in self.arms.items():
            p_ee = ee[arm_id]
            # bare EE tool point against every surface
            for surf in self.surfaces:
                f = self._halfspace_force(p_ee, vel[arm_id][:3], surf)
                if f is not None:
                    self._accumulate(wrenches[arm_id], f, p_ee, p_ee)
            # grasped body sample points against every surface
            if arm.grasped:
                body = self.bodies[arm.grasped]
                for p in body.corner_points():
                    v_p = self.point_velocity(vel[arm_id], p_ee, p)
                    for surf in self.surfaces:
                        f = self._halfspace_force(p, v_p, surf)
                        if f is None:
                            continue
                        self._accumulate(wrenches[arm_id], f, p, p_ee)
                        key = (body.name, surf.name)
                        self._pair_forces[key] = (
                            self._pair_forces.get(key, 0.0)
                            + float(f @ surf.normal))

        # held peg vs every fixture (held or parked)
        for fixture in self.fixtures.values():
            fix_holder = holder.get(fixture.body.name)
            v_fix = self._body_velocity(fixture.body.name, vel)
            for arm_id, arm in self.arms.items():
                if not arm.grasped or arm.grasped == fixture.body.name:
                    continue
                peg = self.bodies[arm.grasped]
                hit = self._hole_contact(peg, fixture, vel[arm_id], v_fix)
                if hit is None:
                    continue
                f, p = hit
                self._accumulate(wrenches[arm_id], f, p, ee[arm_id])
                if fix_holder is not None:
                    self._accumulate(wrenches[fix_holder], -f, p,
                                     ee[fix_holder])

        if self.cfg.gravity:
            for arm_id in self.arms:
                wrenches[arm_id][2] -= self.cfg.tool_mass * GRAVITY
        return wrenches

    # --- stepping ------------------------------------------------------------

    def step(self, commands: dict, dt: float):
        """Advance physics by dt. commands: arm_id -> (q_cmd, gripper_cmd).
        Command entries may be omitted to hold the previous command."""
        if self.halted:
            raise SimulationFault("world is halted", self._snapshot())
        for arm_id, cmd in (commands or {}).items():
            q_cmd, grip_cmd = cmd
            arm = self.arms[arm_id]
            if q_cmd is not None:
                q_cmd = np.asarray(q_cmd, dtype=float)
                if not np.all(np.isfinite(q_cmd)):
                    self._halt(f"non-finite command for arm {arm_id!r}")
                arm.q_cmd = arm.chain.clamp(q_cmd)
            if grip_cmd is not None:
                arm.gripper_cmd = float(np.clip(grip_cmd, 0.0, 1.0))

        kin = self._kinematics()
        wrenches = self.compute_contacts(kin)
        kp, kd, m = self.cfg.servo_kp, self.cfg.kd, self.cfg.m_joint
        alpha = 1.0 - np.exp(-2.0 * np.pi * self.cfg.ft_filter_hz * dt)

        for arm_id, arm in self.arms.items():
            arm.f_ext = wrenches[arm_id]
            tau = kin[arm_id][2].T @ arm.f_ext
            qdd = (kp * (arm.q_cmd - arm.q) - kd * arm.qd + tau) / m
            arm.qd = arm.qd + qdd * dt
            arm.q = arm.q + arm.qd * dt
            clamped = (arm.q < arm.chain.lower) | (arm.q > arm.chain.upper)
            arm.q = arm.chain.clamp(arm.q)
            arm.qd[clamped] = 0.0

            rate = self.cfg.gripper_rate * dt
            arm.gripper += float(np.clip(arm.gripper_cmd - arm.gripper,
                                         -rate, rate))

            arm.f_filt = arm.f_filt + alpha * (arm.f_ext - arm.f_filt)

        f_step = max(float(np.linalg.norm(w[:3])) for w in wrenches.values())
        self.peak_force = max(self.peak_force, f_step)
        self._force_sum += f_step
        self._force_steps += 1

        if self.bodies:
            self._update_grasps()
        if self._pair_forces:
            self._update_marks()
        self.time += dt

        for arm in self.arms.values():
            if not (np.all(np.isfinite(arm.q)) and np.all(np.isfinite(arm.qd))
                    and np.all(np.isfinite(arm.f_ext))):
                self._halt("non-finite arm state")

    def _update_grasps(self):
        for arm_id, arm in self.arms.items():
            ee = self.ee_pose(arm_id)
            if arm.grasped:
                body = self.bodies[arm.grasped]
                if arm.gripper >= body.width_fraction:
                    arm.grasped, arm.grasp_rel = None, None
                else:
                    body.pose = ee.compose(arm.grasp_rel)
                continue
            for body in self.bodies.values():
                if not body.graspable:
                    continue
                if any(a.grasped == body.name for a in self.arms.values()):
                    continue
                near = np.linalg.norm(ee.position - body.pose.position) \
                    < self.cfg.grasp_range
                if near and arm.gripper < body.width_fraction:
                    arm.grasped = body.name
                    arm.grasp_rel = ee.inverse().compose(body.pose)
                    break

    def attach(self, arm_id: str, body_name: str, close_gripper: bool = True):
        """Pre-attach a body to an arm (tasks that start holding a tool)."""
        arm = self.arms[arm_id]
        body = self.bodies[body_name]
        arm.grasped = body_name
        arm.grasp_rel = self.ee_pose(arm_id).inverse().compose(body.pose)
        if close_gripper:
            frac = max(body.width_fraction - 0.2, 0.0)
            arm.gripper = arm.gripper_cmd = frac

    def _update_marks(self):
        if self.marks is None or not len(self.marks.centers):
            return
        surf = next(s for s in self.surfaces if s.name == self.marks.surface)
        for (body_name, surf_name), force in self._pair_forces.items():
            if surf_name != self.marks.surface or force < 1.0:
                continue
            body = self.bodies[body_name]
            pts = body.corner_points()
            depth = (pts - surf.point) @ surf.normal
            touching = pts[depth < 1e-3]
            if len(touching) < 2:
                continue
            # footprint in the surface plane, spanned by two tangents
            t1 = np.cross(surf.normal, [0, 0, 1.0])
            if np.linalg.norm(t1) < 1e-6:
                t1 = np.cross(surf.normal, [1.0, 0, 0])
            t1 /= np.linalg.norm(t1)
            t2 = np.cross(surf.normal, t1)
            uv = touching @ np.column_stack([t1, t2])
            cuv = self.marks.centers @ np.column_stack([t1, t2])
            margin = self.marks.cell_size / 2
            inside = ((cuv[:, 0] >= uv[:, 0].min() - margin)
                      & (cuv[:, 0] <= uv[:, 0].max() + margin)
                      & (cuv[:, 1] >= uv[:, 1].min() - margin)
                      & (cuv[:, 1] <= uv[:, 1].max() + margin))
            self.marks.wiped |= inside

    @property
    def mean_force(self) -> float:
        return self._force_sum / self._force_steps if self._force_steps else 0.0

    def _halt(self, message: str):
        self.halted = True
        raise SimulationFault(message, self._snapshot())

    def _snapshot(self) -> dict:
        return {
            "time": self.time,
            "task": self.task,
            "arms": {aid: {"q": a.q.tolist(), "qd": a.qd.tolist(),
                           "f_ext": a.f_ext.tolist()}
                     for aid, a in self.arms.items()},
            "bodies": {name: b.pose.position.tolist()
                       for name, b in self.bodies.items()},
        }

    # --- observation ---------------------------------------------------------

    def contact_wrench(self, arm_id: str) -> Wrench:
        """Raw wrench in the wrist sensor frame (EE frame)."""
        arm = self.arms[arm_id]
        return self._to_sensor(arm_id, arm.f_ext)

    def _to_sensor(self, arm_id: str, w6: np.ndarray) -> Wrench:
        rot = quat_to_matrix(self.ee_pose(arm_id).orientation)
        return Wrench(rot.T @ w6[:3], rot.T @ w6[3:])

    def observe(self, stiffness: dict | None = None,
                images: list | None = None) -> Observation:
        arms = {}
        for arm_id, arm in self.arms.items():
            tw = self.ee_twist(arm_id)
            arms[arm_id] = ArmObservation(
                ee_pose=self.ee_pose(arm_id),
                ee_twist=Twist(tw[:3], tw[3:]),
                wrench=self._to_sensor(arm_id, arm.f_filt),
                wrench_raw=self._to_sensor(arm_id, arm.f_ext),
                gripper=arm.gripper,
                q=arm.q.copy(),
                stiffness=(stiffness or {}).get(arm_id),
                grasped=arm.grasped,
            )
        return Observation(time=self.time, arms=arms, images=images)
