"""Rigid-body value types and the stiffness-matrix vector codec.

Conventions:
- Quaternions are scalar-first Hamilton ``[w, x, y, z]``, unit norm.
- Rotation vectors (axis-angle) carry the angle in their norm, angle <= pi
  after canonicalization.
- Stiffness is two 3x3 symmetric positive-definite blocks (translation N/m,
  rotation N*m/rad), encoded as the 12 upper-triangular entries of the
  factors U with K = U^T U, row-major per block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-9
# Floor on the factor diagonal: any real 12-vector decodes to a PD matrix.
DIAG_FLOOR = 1.0


class GeometryError(ValueError):
    """Domain error for invalid geometric quantities."""


def _as_vec(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(n)
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"non-finite {n}-vector: {v}")
    return v


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise GeometryError("zero-norm quaternion")
    return q / n


def quat_mul(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = p
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    qv = np.array([0.0, v[0], v[1], v[2]])
    return quat_mul(quat_mul(q, qv), quat_conj(q))[1:]


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (scalar-first, w >= 0)."""
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotvec(q) -> np.ndarray:
    """Unit quaternion -> rotation vector, angle in [0, pi].

    Antipodal quaternions map to the same rotation vector.
    """
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    sin_half = np.linalg.norm(q[1:])
    cos_half = min(q[0], 1.0)
    angle = 2.0 * np.arctan2(sin_half, cos_half)
    if sin_half < 1e-12:
        # small-angle: q_vec ~ axis * angle/2
        return 2.0 * q[1:]
    return q[1:] / sin_half * angle


def rotvec_to_quat(r) -> np.ndarray:
    r = _as_vec(r, 3)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        q = np.array([1.0, r[0] / 2, r[1] / 2, r[2] / 2])
        return quat_normalize(q)
    axis = r / angle
    half = angle / 2.0
    return np.concatenate(([np.cos(half)], axis * np.sin(half)))


@dataclass
class Pose:
    """Rigid-body pose: position (m) + unit quaternion orientation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        self.position = _as_vec(self.position, 3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise GeometryError(f"quaternion norm {n} too far from 1")
        self.orientation = q / n

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, p)

    def compose(self, other: "Pose") -> "Pose":
        """self * other (other expressed in self's frame)."""
        return Pose(
            self.transform_point(other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)


@dataclass
class Twist:
    """Linear + angular 6-vector (displacement or velocity per context)."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = _as_vec(self.linear, 3)
        self.angular = _as_vec(self.angular, 3)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass
class Wrench:
    """Force (N) + torque (N*m)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.force = _as_vec(self.force, 3)
        self.torque = _as_vec(self.torque, 3)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_array(a) -> "Wrench":
        a = _as_vec(a, 6)
        return Wrench(a[:3], a[3:])


def _check_spd(m: np.ndarray, label: str) -> np.ndarray:
    m = np.asarray(m, dtype=float).reshape(3, 3)
    if not np.allclose(m, m.T, atol=1e-9):
        raise GeometryError(f"{label} stiffness block not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eig.min() <= 0:
        raise GeometryError(f"{label} stiffness block not positive-definite "
                            f"(min eigenvalue {eig.min():.3g})")
    return 0.5 * (m + m.T)


@dataclass
class StiffnessSpec:
    """6-DOF stiffness as two SPD 3x3 blocks (translational, rotational)."""

    translational: np.ndarray
    rotational: np.ndarray

    def __post_init__(self):
        self.translational = _check_spd(self.translational, "translational")
        self.rotational = _check_spd(self.rotational, "rotational")

    @staticmethod
    def diagonal(value: float, rotational: float | None = None) -> "StiffnessSpec":
        rot = value if rotational is None else rotational
        return StiffnessSpec(np.eye(3) * value, np.eye(3) * rot)

    def diag(self) -> np.ndarray:
        """The six diagonal entries (translation then rotation)."""
        return np.concatenate([np.diag(self.translational),
                               np.diag(self.rotational)])

    def copy(self) -> "StiffnessSpec":
        return StiffnessSpec(self.translational.copy(), self.rotational.copy())


# Row-major upper-triangular index order within one 3x3 block.
_TRIU_IDX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _factor_to_six(u: np.ndarray) -> np.ndarray:
    return np.array([u[i, j] for i, j in _TRIU_IDX])


def _six_to_factor(v: np.ndarray, floor: float) -> np.ndarray:
    u = np.zeros((3, 3))
    for val, (i, j) in zip(v, _TRIU_IDX):
        u[i, j] = val
    for k in range(3):
        # flooring keeps decode total: any real vector yields a PD matrix
        u[k, k] = max(abs(u[k, k]), floor)
    return u


def cholesky_encode(k: StiffnessSpec) -> np.ndarray:
    """SPD stiffness -> 12-vector of upper-triangular factor entries.

    The factor is canonical (strictly positive diagonal), so
    ``cholesky_decode(cholesky_encode(k))`` reproduces ``k``.
    """
    out = []
    for block, label in ((k.translational, "translational"),
                         (k.rotational, "rotational")):
        try:
            lower = np.linalg.cholesky(block)
        except np.linalg.LinAlgError as e:
            raise GeometryError(f"{label} block is not positive-definite") from e
        out.append(_factor_to_six(lower.T))
    return np.concatenate(out)


def cholesky_decode(v, floor: float = DIAG_FLOOR) -> StiffnessSpec:
    """12-vector -> stiffness via K = U^T U per block.

    Total on all real inputs: the factor diagonal is floored at ``floor``,
    so the result is always positive-definite. Policy heads can emit
    arbitrary values.
    """
    v = np.asarray(v, dtype=float).reshape(12)
    blocks = []
    for half in (v[:6], v[6:]):
        u = _six_to_factor(half, floor)
        blocks.append(u.T @ u)
    return StiffnessSpec(blocks[0], blocks[1])


def pose_error(goal: Pose, current: Pose) -> Twist:
    """World-frame error twist: linear offset + log map of the rotation error.

    Zero iff the poses coincide; angular norm <= pi.
    """
    dq = quat_mul(goal.orientation, quat_conj(current.orientation))
    return Twist(goal.position - current.position, quat_to_rotvec(dq))
