"""Vector, quaternion and interpolation primitives.

Conventions used across the engine:

* vectors are ``(x, y, z)`` tuples of floats, world units in meters;
* quaternions are ``(w, x, y, z)`` tuples, unit length unless stated
  otherwise, and compose left-to-right in application order:
  ``quat_mul(a, b)`` rotates by ``b`` first, then by ``a``;
* angles are radians in ``(-pi, pi]``.

Everything here is allocation-light plain Python on purpose: these
functions sit inside the 120 Hz integration loop and must stay
bit-deterministic for telemetry hashing.
"""

from __future__ import annotations

import math
from typing import Iterable

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY: Quat = (1.0, 0.0, 0.0, 0.0)
X_AXIS: Vec3 = (1.0, 0.0, 0.0)
Y_AXIS: Vec3 = (0.0, 1.0, 0.0)
Z_AXIS: Vec3 = (0.0, 0.0, 1.0)

_EPS = 1e-12


# ---------------------------------------------------------------------------
# vectors
# ---------------------------------------------------------------------------

def vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(a: Vec3, s: float) -> Vec3:
    return (a[0] * s, a[1] * s, a[2] * s)


def vdot(a: Vec3, b: Vec3) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vcross(a: Vec3, b: Vec3) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def vnorm(a: Vec3) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def vnormalize(a: Vec3) -> Vec3:
    n = vnorm(a)
    if n < _EPS:
        raise ValueError("cannot normalize near-zero vector")
    inv = 1.0 / n
    return (a[0] * inv, a[1] * inv, a[2] * inv)


def vlerp(a: Vec3, b: Vec3, s: float) -> Vec3:
    return (
        a[0] + (b[0] - a[0]) * s,
        a[1] + (b[1] - a[1]) * s,
        a[2] + (b[2] - a[2]) * s,
    )


def vdist(a: Vec3, b: Vec3) -> float:
    return vnorm(vsub(a, b))


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat_mul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conj(q: Quat) -> Quat:
    return (q[0], -q[1], -q[2], -q[3])


def quat_norm(q: Quat) -> float:
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def quat_normalize(q: Quat) -> Quat:
    n = quat_norm(q)
    if n < _EPS:
        raise ValueError("cannot normalize near-zero quaternion")
    inv = 1.0 / n
    return (q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv)


def quat_from_axis_angle(axis: Vec3, angle: float) -> Quat:
    """Unit quaternion for a rotation of ``angle`` about unit ``axis``."""
    half = 0.5 * angle
    s = math.sin(half)
    return (math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)


def quat_rotate(q: Quat, v: Vec3) -> Vec3:
    # q v q* expanded; avoids building the temporary pure quaternion.
    w, x, y, z = q
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    return (
        v[0] + w * tx + (y * tz - z * ty),
        v[1] + w * ty + (z * tx - x * tz),
        v[2] + w * tz + (x * ty - y * tx),
    )


def quat_dot(a: Quat, b: Quat) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]


def quat_angle(q: Quat) -> float:
    """Unsigned rotation angle of ``q`` in [0, pi]."""
    w = min(1.0, max(-1.0, abs(q[0]) / max(quat_norm(q), _EPS)))
    return 2.0 * math.acos(w)


def quat_to_matrix(q: Quat) -> tuple[Vec3, Vec3, Vec3]:
    """Rows of the rotation matrix for ``q`` (internal helper)."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return (
        (1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)),
        (2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)),
        (2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)),
    )


def quat_from_matrix(rows: tuple[Vec3, Vec3, Vec3]) -> Quat:
    """Quaternion from rotation-matrix rows (Shepperd's branch selection)."""
    (m00, m01, m02), (m10, m11, m12), (m20, m21, m22) = rows
    tr = m00 + m11 + m22
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = (0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
    elif m00 > m11 and m00 > m22:
        s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = ((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
    elif m11 > m22:
        s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = ((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
    else:
        s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = ((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
    return quat_normalize(q)


def quat_from_to(a: Vec3, b: Vec3) -> Quat:
    """Shortest-arc rotation taking unit vector ``a`` onto unit vector ``b``."""
    d = vdot(a, b)
    if d > 1.0 - 1e-12:
        return IDENTITY
    if d < -1.0 + 1e-12:
        # Antiparallel: pick any perpendicular as the half-turn axis.
        axis = vcross(X_AXIS, a)
        if vnorm(axis) < 1e-6:
            axis = vcross(Y_AXIS, a)
        return quat_from_axis_angle(vnormalize(axis), math.pi)
    c = vcross(a, b)
    q = (1.0 + d, c[0], c[1], c[2])
    return quat_normalize(q)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


# ---------------------------------------------------------------------------
# swing/twist and ordered axis decomposition
# ---------------------------------------------------------------------------

def swing_twist(q: Quat, axis: Vec3) -> tuple[Quat, Quat]:
    """Split ``q`` into ``(twist, swing)`` with ``q = swing * twist``.

    ``twist`` rotates purely about unit ``axis`` and is applied first;
    ``swing`` has its rotation axis perpendicular to ``axis``. The split is
    the standard projection of the quaternion vector part onto the axis.
    When ``q`` is a pure half-turn about a perpendicular axis the projection
    vanishes and the twist is the identity by convention.
    """
    w, x, y, z = q
    d = x * axis[0] + y * axis[1] + z * axis[2]
    tw = (w, d * axis[0], d * axis[1], d * axis[2])
    n = quat_norm(tw)
    if n < 1e-9:
        return IDENTITY, q
    inv = 1.0 / n
    twist = (tw[0] * inv, tw[1] * inv, tw[2] * inv, tw[3] * inv)
    swing = quat_mul(q, quat_conj(twist))
    return twist, swing


Basis = tuple[Vec3, Vec3, Vec3]

IDENTITY_BASIS: Basis = (X_AXIS, Y_AXIS, Z_AXIS)


def decompose_xyz(q: Quat, basis: Basis = IDENTITY_BASIS) -> tuple[Quat, Quat, Quat]:
    """Ordered factorization ``q = q_z * q_y * q_x`` about the basis axes.

    Each factor rotates purely about its basis axis. The factorization is
    exact: the x twist is extracted first (the pair ``q_z * q_y`` is pinned
    by where ``q`` sends the x axis, the remainder is then a pure x
    rotation), so recomposing the three factors reproduces ``q`` to machine
    precision, including at the ``|beta| = pi/2`` singularity where the y/z
    split of the swing is no longer unique but still valid.
    """
    ux, uy, uz = basis
    v = quat_rotate(q, ux)
    # Coordinates of the rotated x axis in the basis frame.
    vx = vdot(v, ux)
    vy = vdot(v, uy)
    vz = vdot(v, uz)
    c = math.hypot(vx, vy)
    beta = math.atan2(-vz, c)
    gamma = math.atan2(vy, vx) if c > 1e-12 else 0.0
    qy = quat_from_axis_angle(uy, beta)
    qz = quat_from_axis_angle(uz, gamma)
    # Exact remainder; pure x rotation up to rounding, snapped to the axis.
    # The half angle keeps the sign of rem so recomposition reproduces q on
    # the same sheet of the double cover (no wrap here on purpose).
    rem = quat_mul(quat_conj(quat_mul(qz, qy)), q)
    alpha = 2.0 * math.atan2(
        rem[1] * ux[0] + rem[2] * ux[1] + rem[3] * ux[2], rem[0]
    )
    qx = quat_from_axis_angle(ux, alpha)
    return qx, qy, qz


def euler_xyz(q: Quat) -> Vec3:
    """Principal angles ``(ax, ay, az)`` with ``q = R_z(az) R_y(ay) R_x(ax)``.

    Same factorization as :func:`decompose_xyz` in the identity basis, but
    returns wrapped scalar angles directly. Used by the reduced-coordinate
    integrator, so it avoids building intermediate quaternions where it can.
    """
    v = quat_rotate(q, X_AXIS)
    c = math.hypot(v[0], v[1])
    ay = math.atan2(-v[2], c)
    az = math.atan2(v[1], v[0]) if c > 1e-12 else 0.0
    qy = quat_from_axis_angle(Y_AXIS, ay)
    qz = quat_from_axis_angle(Z_AXIS, az)
    rem = quat_mul(quat_conj(quat_mul(qz, qy)), q)
    ax = wrap_angle(2.0 * math.atan2(rem[1], rem[0]))
    return (ax, ay, az)


def quat_from_euler_xyz(ax: float, ay: float, az: float) -> Quat:
    """Inverse of :func:`euler_xyz`: ``R_z(az) R_y(ay) R_x(ax)``."""
    qx = quat_from_axis_angle(X_AXIS, ax)
    qy = quat_from_axis_angle(Y_AXIS, ay)
    qz = quat_from_axis_angle(Z_AXIS, az)
    return quat_mul(qz, quat_mul(qy, qx))


def signed_angle_about(q: Quat, axis: Vec3, tol: float = 1e-6) -> float:
    """Signed angle of a single-axis rotation ``q`` about unit ``axis``.

    Raises ``ValueError`` when the rotation axis of ``q`` deviates from
    ``axis`` by more than ``tol`` (in vector-part magnitude), which signals a
    corrupted decomposition upstream.
    """
    w, x, y, z = q
    d = x * axis[0] + y * axis[1] + z * axis[2]
    px = x - d * axis[0]
    py = y - d * axis[1]
    pz = z - d * axis[2]
    if math.sqrt(px * px + py * py + pz * pz) > tol:
        raise ValueError("quaternion axis does not match the requested axis")
    return wrap_angle(2.0 * math.atan2(d, w))


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def slerp(a: Quat, b: Quat, s: float) -> Quat:
    """Shortest-path spherical interpolation, constant angular speed in s."""
    d = quat_dot(a, b)
    if d < 0.0:
        b = (-b[0], -b[1], -b[2], -b[3])
        d = -d
    if d > 1.0 - 1e-10:
        # Nearly parallel: nlerp is exact to working precision here.
        out = (
            a[0] + (b[0] - a[0]) * s,
            a[1] + (b[1] - a[1]) * s,
            a[2] + (b[2] - a[2]) * s,
            a[3] + (b[3] - a[3]) * s,
        )
        return quat_normalize(out)
    theta = math.acos(min(1.0, d))
    st = math.sin(theta)
    fa = math.sin((1.0 - s) * theta) / st
    fb = math.sin(s * theta) / st
    return (
        a[0] * fa + b[0] * fb,
        a[1] * fa + b[1] * fb,
        a[2] * fa + b[2] * fb,
        a[3] * fa + b[3] * fb,
    )


LINEAR = "linear"
SMOOTHSTEP = "smoothstep"
SMOOTHERSTEP = "smootherstep"

_EASING_KINDS = (LINEAR, SMOOTHSTEP, SMOOTHERSTEP)


def ease(s: float, kind: str = SMOOTHSTEP) -> float:
    """Monotone easing on [0, 1]; input is clamped, endpoints map exactly."""
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    if kind == LINEAR:
        return s
    if kind == SMOOTHSTEP:
        return min(s * s * (3.0 - 2.0 * s), 1.0)
    if kind == SMOOTHERSTEP:
        # The quintic can overshoot 1 by an ulp just below s = 1.
        return min(s * s * s * (s * (s * 6.0 - 15.0) + 10.0), 1.0)
    raise ValueError(f"unknown easing kind: {kind!r}")


def hermite(p0: Vec3, m0: Vec3, p1: Vec3, m1: Vec3, s: float) -> Vec3:
    """Cubic Hermite point at ``s`` in [0,1] with endpoint tangents m0, m1."""
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return (
        h00 * p0[0] + h10 * m0[0] + h01 * p1[0] + h11 * m1[0],
        h00 * p0[1] + h10 * m0[1] + h01 * p1[1] + h11 * m1[1],
        h00 * p0[2] + h10 * m0[2] + h01 * p1[2] + h11 * m1[2],
    )


def mean(values: Iterable[float]) -> float:
    vals = list(values)
    return sum(vals) / len(vals) if vals else 0.0
