"""Analytic two-bone arm IK.

Places the wrist of one arm at a world target by solving the
shoulder-elbow-wrist triangle in closed form: elbow flexion from the law of
cosines, elbow location on the reach circle picked by a fixed swivel angle
measured from the vertical reference plane, and the shoulder ball rotation
recovered from the resulting bone directions. The hand joint is then rotated
so its world orientation approaches the goal orientation, clamped to the
wrist's limits.

Joints outside the solved arm are returned untouched, so the solver can run
after clip sampling and before the antagonistic controller reads its targets.
Forearm pronation is preserved from the input pose rather than solved; goal
orientations that demand extra twist about the forearm axis are absorbed by
the wrist clamp and simply come out imperfect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .math3d import (
    Quat,
    Vec3,
    euler_xyz,
    quat_conj,
    quat_from_euler_xyz,
    quat_from_matrix,
    quat_from_to,
    quat_mul,
    quat_rotate,
    vadd,
    vcross,
    vdot,
    vnorm,
    vnormalize,
    vscale,
    vsub,
)
from .skeleton import Pose, Rig, forward_kinematics

DEFAULT_SWIVEL = math.radians(-35.0)

_DOWN: Vec3 = (0.0, -1.0, 0.0)
_FORWARD: Vec3 = (0.0, 0.0, 1.0)


@dataclass
class IkGoal:
    """World-space objective for one hand.

    ``target_rot`` may be None for position-only goals. ``reached`` is
    written by the solver: False means the target was beyond reach (or
    inside the flexion-limited dead zone) and the arm extends toward it.
    """

    hand: str  # "left" | "right"
    target_pos: Vec3
    target_rot: Quat | None = None
    active: bool = True
    reached: bool | None = None

    def __post_init__(self) -> None:
        if self.hand not in ("left", "right"):
            raise ValueError(f"unknown hand {self.hand!r}")
        if not all(math.isfinite(c) for c in self.target_pos):
            raise ValueError("ik target must be finite")


def arm_joint_indices(rig: Rig, hand: str) -> tuple[int, int, int]:
    suffix = "_l" if hand == "left" else "_r"
    return (
        rig.index("upper_arm" + suffix),
        rig.index("forearm" + suffix),
        rig.index("hand" + suffix),
    )


def _clamped_axis_angles(angles: Vec3, joint) -> Vec3:
    out = []
    for k in range(3):
        if not joint.dof[k]:
            out.append(0.0)
            continue
        lo, hi = joint.hard_limits[k]
        out.append(min(max(angles[k], lo), hi))
    return (out[0], out[1], out[2])


def solve_arm(
    pose: Pose, rig: Rig, goal: IkGoal, swivel: float = DEFAULT_SWIVEL
) -> Pose:
    """Return a pose whose wrist meets the goal; other joints bit-identical."""
    if not goal.active:
        goal.reached = None
        return pose

    ua, fa, ha = arm_joint_indices(rig, goal.hand)
    j_ua, j_fa, j_ha = rig.joints[ua], rig.joints[fa], rig.joints[ha]
    len_upper = vnorm(j_fa.tpose_pos)
    len_fore = vnorm(j_ha.tpose_pos)
    reach = len_upper + len_fore

    pos_w, rot_w = forward_kinematics(rig, pose)
    shoulder = pos_w[ua]
    parent_rot = rot_w[j_ua.parent]

    delta = vsub(goal.target_pos, shoulder)
    dist = vnorm(delta)
    if dist < 1e-9:
        # Target on the shoulder point itself: nothing sensible to solve.
        goal.reached = False
        return pose
    dir_sw = vscale(delta, 1.0 / dist)
    overreach = dist > reach

    # Elbow flexion from the triangle, clamped to the hinge range. The
    # triangle is then rebuilt from the clamped flexion so the solved bones
    # stay mutually consistent (the wrist lands on the target ray at the
    # nearest achievable distance).
    dist_tri = min(dist, reach)
    cos_int = (len_upper**2 + len_fore**2 - dist_tri**2) / (2.0 * len_upper * len_fore)
    interior = math.acos(min(max(cos_int, -1.0), 1.0))
    flex = math.pi - interior
    lo, hi = j_fa.hard_limits[0]
    flex_clamped = min(max(flex, max(lo, 0.0)), hi)
    limited = abs(flex_clamped - flex) > 1e-9
    flex = flex_clamped
    dist_eff = math.sqrt(
        len_upper**2
        + len_fore**2
        - 2.0 * len_upper * len_fore * math.cos(math.pi - flex)
    )
    wrist = vadd(shoulder, vscale(dir_sw, dist_eff))

    # Elbow point on the reach circle; swivel 0 puts it straight below the
    # shoulder-wrist line, negative values roll it outward per side.
    a = (len_upper**2 - len_fore**2 + dist_eff**2) / (2.0 * dist_eff)
    h = math.sqrt(max(len_upper**2 - a * a, 0.0))
    center = vadd(shoulder, vscale(dir_sw, a))
    ref = vsub(_DOWN, vscale(dir_sw, vdot(_DOWN, dir_sw)))
    if vnorm(ref) < 1e-6:
        ref = vsub(_FORWARD, vscale(dir_sw, vdot(_FORWARD, dir_sw)))
    ref = vnormalize(ref)
    side = vcross(dir_sw, ref)
    chi = swivel if goal.hand == "left" else -swivel
    elbow = vadd(
        center,
        vscale(vadd(vscale(ref, math.cos(chi)), vscale(side, math.sin(chi))), h),
    )

    bone_u = vnormalize(vsub(elbow, shoulder))
    fore_raw = vsub(wrist, elbow)

    # Shoulder ball rotation mapping the bent local bone pair onto the solved
    # world directions; forearm pronation is read from the incoming pose and
    # preserved, so the local bend direction is (sin t, 0, cos t).
    cur_fa = quat_mul(pose.rotations[fa], quat_conj(j_fa.tpose_rot))
    twist = euler_xyz(cur_fa)[1] if j_fa.dof[1] else 0.0
    if math.sin(flex) > 1e-6 and vnorm(fore_raw) > 1e-9:
        bone_f = vnormalize(fore_raw)
        e2 = (math.sin(twist), 0.0, math.cos(twist))
        e3 = vcross((0.0, 1.0, 0.0), e2)
        f1 = bone_u
        f2_raw = vsub(bone_f, vscale(bone_u, vdot(bone_f, bone_u)))
        n2 = vnorm(f2_raw)
        f2 = vscale(f2_raw, 1.0 / n2) if n2 > 1e-9 else vnormalize(vcross(side, bone_u))
        f3 = vcross(f1, f2)
        rows = tuple(
            (
                f2[i] * e2[0] + f3[i] * e3[0],
                f1[i],
                f2[i] * e2[2] + f3[i] * e3[2],
            )
            for i in range(3)
        )
        rot_ua_world = quat_from_matrix(rows)  # type: ignore[arg-type]
    else:
        # Straight arm: swing the current bone onto the target ray, keep twist.
        cur_dir = quat_rotate(rot_w[ua], (0.0, 1.0, 0.0))
        rot_ua_world = quat_mul(quat_from_to(cur_dir, dir_sw), rot_w[ua])

    out = pose.copy()
    out.rotations[ua] = quat_mul(quat_conj(parent_rot), rot_ua_world)
    out.rotations[fa] = quat_mul(
        quat_from_euler_xyz(flex, twist, 0.0), j_fa.tpose_rot
    )

    # Wrist orientation toward the goal, clamped per axis.
    if goal.target_rot is not None:
        rot_fa_world = quat_mul(rot_ua_world, out.rotations[fa])
        hand_local = quat_mul(quat_conj(rot_fa_world), goal.target_rot)
        q = quat_mul(hand_local, quat_conj(j_ha.tpose_rot))
        angles = _clamped_axis_angles(euler_xyz(q), j_ha)
        out.rotations[ha] = quat_mul(quat_from_euler_xyz(*angles), j_ha.tpose_rot)

    err = vnorm(vsub(wrist, goal.target_pos))
    goal.reached = (not overreach) and (not limited) and err < 1e-3
    return out
