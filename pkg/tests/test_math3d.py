from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflexrig import math3d as m3


def random_unit_quats(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def quats_close(a, b, tol=1e-9) -> bool:
    return max(abs(a[i] - b[i]) for i in range(4)) < tol


def rot_oracle(q, v):
    """Rotation via the explicit matrix, independent of quat_rotate."""
    rows = m3.quat_to_matrix(q)
    return tuple(m3.vdot(r, v) for r in rows)


# ---------------------------------------------------------------------------
# basic vector / quaternion algebra
# ---------------------------------------------------------------------------

def test_quat_rotate_matches_matrix_oracle():
    for q in random_unit_quats(200, seed=11):
        q = tuple(q)
        v = (0.3, -1.2, 2.0)
        got = m3.quat_rotate(q, v)
        want = rot_oracle(q, v)
        assert m3.vdist(got, want) < 1e-12


def test_quat_mul_composes_rotations():
    a = m3.quat_from_axis_angle(m3.Y_AXIS, 0.7)
    b = m3.quat_from_axis_angle(m3.X_AXIS, -1.1)
    v = (0.2, 0.5, -0.4)
    lhs = m3.quat_rotate(m3.quat_mul(a, b), v)
    rhs = m3.quat_rotate(a, m3.quat_rotate(b, v))
    assert m3.vdist(lhs, rhs) < 1e-12


def test_quat_from_matrix_round_trip():
    for q in random_unit_quats(500, seed=7):
        q = tuple(q)
        back = m3.quat_from_matrix(m3.quat_to_matrix(q))
        # Matrix kills the sign; compare up to the double cover.
        same = quats_close(back, q, 1e-9)
        flipped = quats_close(back, tuple(-c for c in q), 1e-9)
        assert same or flipped


def test_quat_from_to():
    a = m3.vnormalize((1.0, 2.0, -0.5))
    b = m3.vnormalize((-0.3, 0.4, 1.0))
    q = m3.quat_from_to(a, b)
    assert m3.vdist(m3.quat_rotate(q, a), b) < 1e-12
    # Antiparallel input still produces a valid half turn.
    q = m3.quat_from_to((0.0, 1.0, 0.0), (0.0, -1.0, 0.0))
    assert m3.vdist(m3.quat_rotate(q, (0.0, 1.0, 0.0)), (0.0, -1.0, 0.0)) < 1e-12


# ---------------------------------------------------------------------------
# swing / twist
# ---------------------------------------------------------------------------

def test_swing_twist_pure_twist_input():
    q = m3.quat_from_axis_angle(m3.X_AXIS, math.pi / 2.0)
    twist, swing = m3.swing_twist(q, m3.X_AXIS)
    assert quats_close(twist, q)
    assert quats_close(swing, m3.IDENTITY)


def test_swing_twist_pure_swing_input():
    # 180 deg about y has no twist component about x; twist is identity by
    # convention and the swing carries the whole rotation.
    q = m3.quat_from_axis_angle(m3.Y_AXIS, math.pi)
    twist, swing = m3.swing_twist(q, m3.X_AXIS)
    assert quats_close(twist, m3.IDENTITY)
    assert quats_close(swing, q)


def test_swing_twist_structure_random():
    axis = m3.vnormalize((0.3, -0.8, 0.52))
    for q in random_unit_quats(300, seed=3):
        q = tuple(q)
        twist, swing = m3.swing_twist(q, axis)
        # twist vector part parallel to axis
        tv = (twist[1], twist[2], twist[3])
        assert m3.vnorm(m3.vcross(tv, axis)) < 1e-9
        # swing vector part perpendicular to axis
        sv = (swing[1], swing[2], swing[3])
        assert abs(m3.vdot(sv, axis)) < 1e-9
        # exact recomposition q = swing * twist
        assert quats_close(m3.quat_mul(swing, twist), q, 1e-12)
        # unit length preserved
        assert abs(m3.quat_norm(twist) - 1.0) < 1e-12
        assert abs(m3.quat_norm(swing) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# ordered xyz factorization
# ---------------------------------------------------------------------------

def test_decompose_xyz_identity_and_single_axis():
    qx, qy, qz = m3.decompose_xyz(m3.IDENTITY)
    for q in (qx, qy, qz):
        assert quats_close(q, m3.IDENTITY)
    rot = m3.quat_from_axis_angle(m3.Y_AXIS, 0.9)
    qx, qy, qz = m3.decompose_xyz(rot)
    assert quats_close(qx, m3.IDENTITY, 1e-12)
    assert quats_close(qy, rot, 1e-12)
    assert quats_close(qz, m3.IDENTITY, 1e-12)


def test_decompose_xyz_recomposition_bulk():
    # Hard recomposition bound over many random rotations, both covers.
    for q in random_unit_quats(10_000, seed=42):
        q = tuple(q)
        qx, qy, qz = m3.decompose_xyz(q)
        rec = m3.quat_mul(qz, m3.quat_mul(qy, qx))
        err = max(abs(rec[i] - q[i]) for i in range(4))
        assert err < 1e-9


def test_decompose_xyz_factors_are_single_axis():
    for q in random_unit_quats(500, seed=9):
        q = tuple(q)
        qx, qy, qz = m3.decompose_xyz(q)
        m3.signed_angle_about(qx, m3.X_AXIS)  # raises on axis mismatch
        m3.signed_angle_about(qy, m3.Y_AXIS)
        m3.signed_angle_about(qz, m3.Z_AXIS)


def test_decompose_xyz_gimbal_pitch():
    # beta = +-pi/2 keeps the factorization exact.
    for sign in (1.0, -1.0):
        base = m3.quat_from_axis_angle(m3.Y_AXIS, sign * math.pi / 2.0)
        extra = m3.quat_from_axis_angle(m3.X_AXIS, 0.4)
        q = m3.quat_mul(base, extra)
        qx, qy, qz = m3.decompose_xyz(q)
        rec = m3.quat_mul(qz, m3.quat_mul(qy, qx))
        assert quats_close(rec, q, 1e-9)


def test_decompose_xyz_custom_basis():
    rng = np.random.default_rng(21)
    for _ in range(100):
        # Random orthonormal basis from a random rotation.
        b = tuple(random_unit_quats(1, seed=int(rng.integers(1 << 30)))[0])
        ux = m3.quat_rotate(b, m3.X_AXIS)
        uy = m3.quat_rotate(b, m3.Y_AXIS)
        uz = m3.quat_rotate(b, m3.Z_AXIS)
        q = tuple(random_unit_quats(1, seed=int(rng.integers(1 << 30)))[0])
        qx, qy, qz = m3.decompose_xyz(q, (ux, uy, uz))
        rec = m3.quat_mul(qz, m3.quat_mul(qy, qx))
        assert quats_close(rec, q, 1e-9)
        m3.signed_angle_about(qx, ux)
        m3.signed_angle_about(qy, uy)
        m3.signed_angle_about(qz, uz)


def test_signed_angle_about_values_and_mismatch():
    q = m3.quat_from_axis_angle(m3.Z_AXIS, math.radians(30.0))
    assert abs(m3.signed_angle_about(q, m3.Z_AXIS) - math.radians(30.0)) < 1e-12
    q = m3.quat_from_axis_angle(m3.Z_AXIS, math.radians(-30.0))
    assert abs(m3.signed_angle_about(q, m3.Z_AXIS) + math.radians(30.0)) < 1e-12
    with pytest.raises(ValueError):
        m3.signed_angle_about(
            m3.quat_from_axis_angle(m3.X_AXIS, 0.5), m3.Z_AXIS
        )


def test_signed_angle_wraps_into_principal_range():
    q = m3.quat_from_axis_angle(m3.Y_AXIS, 3.0 * math.pi / 2.0)
    a = m3.signed_angle_about(q, m3.Y_AXIS)
    assert abs(a + math.pi / 2.0) < 1e-12


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def test_slerp_endpoints_and_midpoint():
    a = m3.IDENTITY
    b = m3.quat_from_axis_angle(m3.Z_AXIS, math.pi / 2.0)
    assert quats_close(m3.slerp(a, b, 0.0), a, 1e-12)
    assert quats_close(m3.slerp(a, b, 1.0), b, 1e-12)
    mid = m3.slerp(a, b, 0.5)
    want = m3.quat_from_axis_angle(m3.Z_AXIS, math.pi / 4.0)
    assert quats_close(mid, want, 1e-12)


def test_slerp_constant_angular_speed():
    a = tuple(random_unit_quats(1, seed=5)[0])
    b = tuple(random_unit_quats(1, seed=6)[0])
    steps = 64
    qs = [m3.slerp(a, b, i / steps) for i in range(steps + 1)]
    gaps = [
        m3.quat_angle(m3.quat_mul(qs[i + 1], m3.quat_conj(qs[i])))
        for i in range(steps)
    ]
    assert max(gaps) - min(gaps) < 1e-7


def test_slerp_takes_shortest_path_on_antipodal_sign():
    a = m3.quat_from_axis_angle(m3.Y_AXIS, 0.3)
    b = m3.quat_from_axis_angle(m3.Y_AXIS, 0.9)
    b_neg = tuple(-c for c in b)
    for s in (0.25, 0.5, 0.75):
        q1 = m3.slerp(a, b, s)
        q2 = m3.slerp(a, b_neg, s)
        # Same rotation regardless of input sign.
        assert min(
            max(abs(q1[i] - q2[i]) for i in range(4)),
            max(abs(q1[i] + q2[i]) for i in range(4)),
        ) < 1e-9
        assert m3.quat_angle(m3.quat_mul(q1, m3.quat_conj(a))) <= 0.6 * s + 1e-9


def test_ease_frozen_values():
    assert m3.ease(0.25, m3.LINEAR) == 0.25
    assert m3.ease(0.25, m3.SMOOTHSTEP) == 0.15625
    assert m3.ease(0.5, m3.SMOOTHERSTEP) == 0.5
    for kind in (m3.LINEAR, m3.SMOOTHSTEP, m3.SMOOTHERSTEP):
        assert m3.ease(0.0, kind) == 0.0
        assert m3.ease(1.0, kind) == 1.0
        assert m3.ease(-0.5, kind) == 0.0
        assert m3.ease(1.5, kind) == 1.0
    with pytest.raises(ValueError):
        m3.ease(0.5, "bounce")


@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=1.0),
)
@settings(max_examples=200, deadline=None)
def test_ease_monotone(u, v):
    lo, hi = min(u, v), max(u, v)
    for kind in (m3.LINEAR, m3.SMOOTHSTEP, m3.SMOOTHERSTEP):
        assert m3.ease(lo, kind) <= m3.ease(hi, kind) + 1e-15


def test_hermite_endpoints_and_midpoint():
    p0 = (0.0, 0.0, 0.0)
    p1 = (2.0, -1.0, 0.5)
    z = (0.0, 0.0, 0.0)
    assert m3.vdist(m3.hermite(p0, z, p1, z, 0.0), p0) < 1e-15
    assert m3.vdist(m3.hermite(p0, z, p1, z, 1.0), p1) < 1e-15
    mid = m3.hermite(p0, z, p1, z, 0.5)
    assert m3.vdist(mid, (1.0, -0.5, 0.25)) < 1e-12


def test_hermite_tangents_by_finite_difference():
    p0 = (0.0, 1.0, 0.0)
    p1 = (1.0, 0.0, 2.0)
    m0 = (0.5, 2.0, -1.0)
    m1 = (-1.0, 0.0, 0.3)
    h = 1e-5

    def central(s: float):
        a = m3.hermite(p0, m0, p1, m1, s - h)
        b = m3.hermite(p0, m0, p1, m1, s + h)
        return m3.vscale(m3.vsub(b, a), 0.5 / h)

    d0 = central(0.0)
    d1 = central(1.0)
    assert m3.vdist(d0, m0) < 1e-4
    assert m3.vdist(d1, m1) < 1e-4


def test_wrap_angle():
    assert m3.wrap_angle(math.pi) == math.pi
    assert abs(m3.wrap_angle(-math.pi) - math.pi) < 1e-15
    assert abs(m3.wrap_angle(3.0 * math.pi) - math.pi) < 1e-12
    assert abs(m3.wrap_angle(0.1) - 0.1) < 1e-15
