import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compbench.geometry import (
    GeometryError,
    Pose,
    StiffnessSpec,
    Twist,
    Wrench,
    cholesky_decode,
    cholesky_encode,
    pose_error,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_rotvec,
    rotvec_to_quat,
)

finite_floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_spd(rng, scale=100.0):
    a = rng.standard_normal((3, 3))
    return a @ a.T + np.eye(3) * (1.0 + scale * rng.random())


# --- codec oracle examples ---------------------------------------------------

def test_encode_identity_blocks():
    k = StiffnessSpec(np.eye(3), np.eye(3))
    v = cholesky_encode(k)
    expected = np.array([1, 0, 0, 1, 0, 1] * 2, dtype=float)
    np.testing.assert_allclose(v, expected, atol=1e-12)


def test_encode_uniform_500():
    k = StiffnessSpec.diagonal(500.0)
    v = cholesky_encode(k)
    r = np.sqrt(500.0)
    expected = np.array([r, 0, 0, r, 0, r] * 2)
    np.testing.assert_allclose(v, expected, rtol=1e-12)


def test_decode_zero_vector_hits_floor():
    k = cholesky_decode(np.zeros(12))
    np.testing.assert_allclose(k.translational, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(k.rotational, np.eye(3), atol=1e-12)


def test_decode_sqrt250_gives_250():
    r = np.sqrt(250.0)
    v = np.array([r, 0, 0, r, 0, r] * 2)
    k = cholesky_decode(v)
    np.testing.assert_allclose(k.translational, np.eye(3) * 250.0, rtol=1e-12)
    np.testing.assert_allclose(k.rotational, np.eye(3) * 250.0, rtol=1e-12)


def test_decode_off_diagonal_product():
    # U = [[2,3,0],[0,4,0],[0,0,1]] -> (U^T U)[0,1] = 2*3 = 6
    v = np.array([2, 3, 0, 4, 0, 1, 1, 0, 0, 1, 0, 1], dtype=float)
    k = cholesky_decode(v)
    u = np.array([[2, 3, 0], [0, 4, 0], [0, 0, 1]], dtype=float)
    np.testing.assert_allclose(k.translational, u.T @ u, rtol=1e-12)
    assert k.translational[0, 1] == pytest.approx(6.0)


def test_negative_diagonal_same_as_positive():
    v_pos = np.array([3, 1, 2, 4, 5, 6, 1, 0, 0, 1, 0, 1], dtype=float)
    v_neg = v_pos.copy()
    v_neg[0] = -3
    v_neg[3] = -4
    v_neg[5] = -6
    k_pos = cholesky_decode(v_pos)
    k_neg = cholesky_decode(v_neg)
    # |d| flooring: sign of the factor diagonal cannot matter
    np.testing.assert_allclose(k_neg.translational, k_pos.translational)


def test_encode_rejects_indefinite():
    with pytest.raises(GeometryError):
        StiffnessSpec(np.diag([1.0, -1.0, 1.0]), np.eye(3))


# --- codec properties --------------------------------------------------------

@given(arrays(np.float64, 12, elements=finite_floats))
def test_decode_always_positive_definite(v):
    k = cholesky_decode(v)
    for block in (k.translational, k.rotational):
        np.testing.assert_allclose(block, block.T, atol=1e-9)
        assert np.linalg.eigvalsh(block).min() > 0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_roundtrip_spd(seed):
    rng = np.random.default_rng(seed)
    k = StiffnessSpec(random_spd(rng), random_spd(rng))
    k2 = cholesky_decode(cholesky_encode(k))
    np.testing.assert_allclose(k2.translational, k.translational,
                               rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(k2.rotational, k.rotational,
                               rtol=1e-9, atol=1e-9)


def test_roundtrip_small_diagonal_below_floor():
    # encode emits factors below the floor; decode must not clamp them up
    # when they came from a genuine SPD matrix... but flooring is part of
    # the decode contract, so sub-floor stiffness does not survive.
    k = StiffnessSpec.diagonal(0.25)
    k2 = cholesky_decode(cholesky_encode(k))
    np.testing.assert_allclose(k2.translational, np.eye(3), atol=1e-12)


# --- quaternions / poses -----------------------------------------------------

@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_rotvec_roundtrip_preserves_rotation(seed):
    rng = np.random.default_rng(seed)
    q = random_quat(rng)
    q2 = rotvec_to_quat(quat_to_rotvec(q))
    v = rng.standard_normal(3)
    np.testing.assert_allclose(quat_rotate(q2, v), quat_rotate(q, v),
                               rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_antipodal_quats_same_rotvec(seed):
    rng = np.random.default_rng(seed)
    q = random_quat(rng)
    np.testing.assert_allclose(quat_to_rotvec(q), quat_to_rotvec(-q),
                               atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_rotvec_angle_canonical(seed):
    rng = np.random.default_rng(seed)
    q = random_quat(rng)
    assert np.linalg.norm(quat_to_rotvec(q)) <= np.pi + 1e-12


def test_pose_error_zero_on_identical():
    rng = np.random.default_rng(7)
    p = Pose(rng.standard_normal(3), random_quat(rng))
    e = pose_error(p, p)
    np.testing.assert_allclose(e.as_array(), np.zeros(6), atol=1e-12)


def test_pose_error_pure_translation():
    a = Pose([1.0, 2.0, 3.0])
    b = Pose([1.0, 2.0, 2.9])
    e = pose_error(a, b)
    np.testing.assert_allclose(e.linear, [0, 0, 0.1], atol=1e-12)
    np.testing.assert_allclose(e.angular, np.zeros(3), atol=1e-12)


def test_pose_error_pure_rotation():
    q = rotvec_to_quat([0, 0, np.pi / 2])
    e = pose_error(Pose(orientation=q), Pose())
    np.testing.assert_allclose(e.linear, np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(e.angular, [0, 0, np.pi / 2], rtol=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_pose_compose_inverse(seed):
    rng = np.random.default_rng(seed)
    p = Pose(rng.standard_normal(3), random_quat(rng))
    ident = p.compose(p.inverse())
    np.testing.assert_allclose(ident.position, np.zeros(3), atol=1e-9)
    e = pose_error(ident, Pose())
    np.testing.assert_allclose(e.angular, np.zeros(3), atol=1e-9)


def test_quat_mul_identity():
    q = quat_normalize([0.3, -0.4, 0.5, 0.6])
    np.testing.assert_allclose(quat_mul(q, [1, 0, 0, 0]), q)
    np.testing.assert_allclose(quat_mul([1, 0, 0, 0], q), q)


def test_twist_wrench_arrays():
    t = Twist([1, 2, 3], [4, 5, 6])
    np.testing.assert_array_equal(t.as_array(), [1, 2, 3, 4, 5, 6])
    w = Wrench.from_array([6, 5, 4, 3, 2, 1])
    np.testing.assert_array_equal(w.force, [6, 5, 4])
    np.testing.assert_array_equal(w.torque, [3, 2, 1])


def test_pose_rejects_bad_quaternion():
    with pytest.raises(GeometryError):
        Pose([0, 0, 0], [0.5, 0.5, 0.5, 0.6])
