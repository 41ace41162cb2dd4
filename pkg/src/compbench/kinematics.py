"""Serial-chain kinematics: modified-DH parameter rows, forward kinematics,
and the geometric Jacobian.

A chain is N revolute joints described by rows (alpha, a, d, theta0) in the
modified (Craig) convention: the transform contributed by joint i is

    T_i = Rot_x(alpha_i) * Trans_x(a_i) * Rot_z(theta0_i + q_i) * Trans_z(d_i)

followed by a fixed end-effector offset after the last joint. The hot path
(fk_jac) works on bare 3x3 matrices; Pose objects are built only at the edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Pose, quat_from_matrix, quat_to_matrix


@dataclass
class KinematicChain:
    """N revolute joints (modified DH rows) plus a fixed EE offset."""

    rows: np.ndarray                      # (N, 4): alpha, a, d, theta0
    lower: np.ndarray                     # joint limits (rad)
    upper: np.ndarray
    ee_offset: Pose = field(default_factory=Pose)
    base: Pose = field(default_factory=Pose)
    name: str = "chain"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, 4)
        n = self.rows.shape[0]
        if n < 2:
            raise GeometryError("chain needs at least 2 joints")
        self.lower = np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n)
        if not np.all(self.lower < self.upper):
            raise GeometryError("joint limits must satisfy lower < upper")
        # row i >= 1 carries the link between joints i-1 and i; the EE offset
        # is the final link. Row 0 is base mounting and may be zero.
        lengths = np.hypot(self.rows[1:, 1], self.rows[1:, 2])
        if np.any(lengths <= 0) or np.linalg.norm(self.ee_offset.position) <= 0:
            raise GeometryError("every link needs a nonzero length (a, d, or EE offset)")
        # cached constants for the hot path
        self._ca = np.cos(self.rows[:, 0])
        self._sa = np.sin(self.rows[:, 0])
        self._base_pos = np.asarray(self.base.position, dtype=float)
        self._base_rot = quat_to_matrix(self.base.orientation)
        self._off_pos = np.asarray(self.ee_offset.position, dtype=float)
        self._off_rot = quat_to_matrix(self.ee_offset.orientation)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def frame_arrays(self, q) -> tuple[np.ndarray, np.ndarray]:
        """World position (N, 3) and rotation (N, 3, 3) of every joint frame
        (after its own row transform); the EE offset is not applied."""
        q = np.asarray(q, dtype=float).reshape(self.n)
        ps = np.empty((self.n, 3))
        rs = np.empty((self.n, 3, 3))
        p = self._base_pos
        r = self._base_rot
        for i in range(self.n):
            ca, sa = self._ca[i], self._sa[i]
            a, d = self.rows[i, 1], self.rows[i, 2]
            th = self.rows[i, 3] + q[i]
            ct, st = np.cos(th), np.sin(th)
            p = p + r @ (a, -d * sa, d * ca)
            r = r @ np.array(((ct, -st, 0.0),
                              (ca * st, ca * ct, -sa),
                              (sa * st, sa * ct, ca)))
            ps[i] = p
            rs[i] = r
        return ps, rs

    def joint_frames(self, q) -> list[Pose]:
        """Pose of each joint frame (after its row transform), then the EE."""
        ps, rs = self.frame_arrays(q)
        frames = [Pose(ps[i], quat_from_matrix(rs[i])) for i in range(self.n)]
        frames.append(frames[-1].compose(self.ee_offset))
        return frames

    def random_configuration(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


def fk_jac(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-pass EE position, EE rotation matrix, and geometric Jacobian."""
    ps, rs = chain.frame_arrays(q)
    p_ee = ps[-1] + rs[-1] @ chain._off_pos
    r_ee = rs[-1] @ chain._off_rot
    z = rs[:, :, 2]
    j = np.empty((6, chain.n))
    j[:3] = np.cross(z, p_ee - ps).T
    j[3:] = z.T
    return p_ee, r_ee, j


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """EE pose in the world frame."""
    ps, rs = chain.frame_arrays(q)
    return Pose(ps[-1] + rs[-1] @ chain._off_pos,
                quat_from_matrix(rs[-1] @ chain._off_rot))


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian (6 x N): rows = (linear; angular) EE velocity per
    unit joint velocity. Joint i's axis is the z-axis of its frame."""
    return fk_jac(chain, q)[2]


# --- default chains ----------------------------------------------------------

def planar_arm(lengths=(0.25, 0.25), tool: float = 0.15,
               height: float = 0.25, name: str = "planar3") -> KinematicChain:
    """Default single-arm chain: 3 revolute z-axis joints moving in a
    horizontal plane at the given height, pressing against vertical work
    surfaces. Last link length ``tool`` goes into the EE offset."""
    rows = [[0.0, 0.0, height, 0.0]]
    for length in lengths:
        rows.append([0.0, length, 0.0, 0.0])
    n = len(rows)
    return KinematicChain(
        rows=np.array(rows),
        lower=np.full(n, -3.0),
        upper=np.full(n, 3.0),
        ee_offset=Pose([tool, 0.0, 0.0]),
        name=name,
    )


def sixdof_arm(base: Pose | None = None, name: str = "sixdof") -> KinematicChain:
    """Default 6-DOF arm: anthropomorphic layout (yaw shoulder, two pitch
    joints, roll-pitch-roll wrist) with small structural offsets so every
    row carries a physical link."""
    rows = np.array([
        [0.0,        0.00, 0.30, 0.0],   # shoulder yaw, column height
        [np.pi / 2,  0.05, 0.00, 0.0],   # shoulder pitch
        [0.0,        0.30, 0.00, 0.0],   # elbow pitch, upper arm
        [np.pi / 2,  0.04, 0.25, 0.0],   # forearm roll, forearm length
        [-np.pi / 2, 0.03, 0.00, 0.0],   # wrist pitch
        [np.pi / 2,  0.02, 0.06, 0.0],   # wrist roll
    ])
    return KinematicChain(
        rows=rows,
        lower=np.full(6, -3.0),
        upper=np.full(6, 3.0),
        ee_offset=Pose([0.0, 0.0, 0.05]),
        base=base if base is not None else Pose(),
        name=name,
    )


def bimanual_pair(separation: float = 0.5) -> tuple[KinematicChain, KinematicChain]:
    """Two 6-DOF arms placed symmetrically about the x-z plane."""
    left = sixdof_arm(base=Pose([0.0, separation / 2, 0.0]), name="left")
    right = sixdof_arm(base=Pose([0.0, -separation / 2, 0.0]), name="right")
    return left, right


def default_chain(kind: str) -> KinematicChain:
    if kind == "planar3":
        return planar_arm()
    if kind == "sixdof":
        return sixdof_arm()
    raise GeometryError(f"unknown default chain {kind!r}")


def finite_difference_jacobian(chain: KinematicChain, q, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian; the independent oracle for jacobian()."""
    from .geometry import quat_conj, quat_mul, quat_to_rotvec

    q = np.asarray(q, dtype=float)
    j = np.zeros((6, chain.n))
    for i in range(chain.n):
        dq = np.zeros_like(q)
        dq[i] = h
        hi = forward_kinematics(chain, q + dq)
        lo = forward_kinematics(chain, q - dq)
        j[:3, i] = (hi.position - lo.position) / (2 * h)
        dquat = quat_mul(hi.orientation, quat_conj(lo.orientation))
        j[3:, i] = quat_to_rotvec(dquat) / (2 * h)
    return j
