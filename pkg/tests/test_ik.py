import math
import random

import pytest

from reflexrig import defaults, ik
from reflexrig import math3d as m3
from reflexrig import skeleton as sk

L_UPPER = 0.26
L_FORE = 0.22
REACH = L_UPPER + L_FORE


@pytest.fixture(scope="module")
def rig():
    return defaults.default_rig()


def _base_pose(rig):
    clip = defaults.stand_clip(rig)
    return sk.sample_clip(clip, 0.0)


def _shoulder(rig, pose, hand="left"):
    pos, _ = sk.forward_kinematics(rig, pose)
    ua, _, _ = ik.arm_joint_indices(rig, hand)
    return pos[ua]


def _wrist(rig, pose, hand="left"):
    pos, _ = sk.forward_kinematics(rig, pose)
    _, _, ha = ik.arm_joint_indices(rig, hand)
    return pos[ha]


def _flexion(rig, pose, hand="left"):
    _, fa, _ = ik.arm_joint_indices(rig, hand)
    q = m3.quat_mul(pose.rotations[fa], m3.quat_conj(rig.joints[fa].tpose_rot))
    return m3.euler_xyz(q)[0]


def _expected_flexion(dist):
    cos_int = (L_UPPER**2 + L_FORE**2 - dist * dist) / (2.0 * L_UPPER * L_FORE)
    return math.pi - math.acos(min(max(cos_int, -1.0), 1.0))


def _random_dir(rng):
    while True:
        v = (rng.gauss(0, 1), rng.gauss(0, 1), rng.gauss(0, 1))
        n = m3.vnorm(v)
        if n > 1e-6:
            return m3.vscale(v, 1.0 / n)


# ---------------------------------------------------------------------------

def test_bone_lengths_match_rig(rig):
    _, fa, ha = ik.arm_joint_indices(rig, "left")
    assert m3.vnorm(rig.joints[fa].tpose_pos) == pytest.approx(L_UPPER)
    assert m3.vnorm(rig.joints[ha].tpose_pos) == pytest.approx(L_FORE)


def test_full_extension_along_ray(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    target = m3.vadd(s, (REACH * 0.76, -REACH * 0.52, REACH * 0.39))
    target = m3.vadd(s, m3.vscale(m3.vnormalize(m3.vsub(target, s)), REACH))
    goal = ik.IkGoal("left", target)
    out = ik.solve_arm(pose, rig, goal)
    assert m3.vdist(_wrist(rig, out), target) < 1e-4
    assert abs(_flexion(rig, out)) < 1e-4
    assert goal.reached


def test_half_reach_flexion_matches_law_of_cosines(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    dist = 0.5 * REACH
    target = m3.vadd(s, m3.vscale(m3.vnormalize((0.5, -0.6, 0.7)), dist))
    goal = ik.IkGoal("left", target)
    out = ik.solve_arm(pose, rig, goal)
    assert m3.vdist(_wrist(rig, out), target) < 1e-4
    assert _flexion(rig, out) == pytest.approx(_expected_flexion(dist), abs=1e-6)
    assert goal.reached


def test_random_reachable_targets(rig):
    pose = _base_pose(rig)
    rng = random.Random(99)
    for hand in ("left", "right"):
        s = _shoulder(rig, pose, hand)
        for _ in range(500):
            dist = rng.uniform(0.19, 0.475)
            target = m3.vadd(s, m3.vscale(_random_dir(rng), dist))
            goal = ik.IkGoal(hand, target)
            out = ik.solve_arm(pose, rig, goal, swivel=math.radians(-35.0))
            assert m3.vdist(_wrist(rig, out, hand), target) < 1e-4, (hand, target)
            assert _flexion(rig, out, hand) == pytest.approx(
                _expected_flexion(dist), abs=1e-5
            )


def test_solver_fixed_point(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    goal = ik.IkGoal("left", m3.vadd(s, (0.25, -0.2, 0.15)))
    once = ik.solve_arm(pose, rig, goal)
    again = ik.solve_arm(once, rig, ik.IkGoal("left", _wrist(rig, once)))
    for a, b in zip(once.rotations, again.rotations):
        assert m3.quat_angle(m3.quat_mul(a, m3.quat_conj(b))) < 1e-6


def test_beyond_reach_extends_and_flags(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    d = m3.vnormalize((1.0, 0.3, 0.4))
    goal = ik.IkGoal("left", m3.vadd(s, m3.vscale(d, 1.5)))
    out = ik.solve_arm(pose, rig, goal)
    assert goal.reached is False
    assert m3.vdist(_wrist(rig, out), m3.vadd(s, m3.vscale(d, REACH))) < 1e-6
    assert abs(_flexion(rig, out)) < 1e-6


def test_too_close_target_flags_unreached(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    goal = ik.IkGoal("left", m3.vadd(s, (0.04, 0.0, 0.0)))
    out = ik.solve_arm(pose, rig, goal)
    assert goal.reached is False
    # Elbow pinned at its flexion stop, wrist as close as the hinge allows.
    _, fa, _ = ik.arm_joint_indices(rig, "left")
    assert _flexion(rig, out) == pytest.approx(rig.joints[fa].hard_limits[0][1])


def test_non_interference(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    goal = ik.IkGoal("left", m3.vadd(s, (0.2, -0.25, 0.1)))
    out = ik.solve_arm(pose, rig, goal)
    touched = set(ik.arm_joint_indices(rig, "left"))
    for j in range(len(rig.joints)):
        assert out.positions[j] == pose.positions[j]
        if j not in touched:
            assert out.rotations[j] == pose.rotations[j]


def test_continuity_along_smooth_path(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    prev = None
    for i in range(120):
        t = i / 119.0
        ang = -0.9 + 1.8 * t
        dist = 0.30 + 0.12 * math.sin(3.0 * t)
        target = m3.vadd(
            s,
            (
                dist * math.cos(ang) * 0.8,
                -dist * 0.5,
                dist * math.sin(ang) * 0.8,
            ),
        )
        out = ik.solve_arm(pose, rig, ik.IkGoal("left", target))
        if prev is not None:
            for j in ik.arm_joint_indices(rig, "left"):
                gap = m3.quat_angle(
                    m3.quat_mul(out.rotations[j], m3.quat_conj(prev.rotations[j]))
                )
                assert gap < 0.2, (i, j, gap)
        prev = out


def test_swivel_moves_elbow_not_wrist(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    target = m3.vadd(s, (0.2, -0.28, 0.12))
    out_a = ik.solve_arm(pose, rig, ik.IkGoal("left", target), swivel=0.0)
    out_b = ik.solve_arm(pose, rig, ik.IkGoal("left", target), swivel=-0.6)
    pos_a, _ = sk.forward_kinematics(rig, out_a)
    pos_b, _ = sk.forward_kinematics(rig, out_b)
    _, fa, ha = ik.arm_joint_indices(rig, "left")
    assert m3.vdist(pos_a[ha], pos_b[ha]) < 1e-6
    assert m3.vdist(pos_a[fa], pos_b[fa]) > 0.01


def test_wrist_orientation_tracks_reachable_goal(rig):
    pose = _base_pose(rig)
    s = _shoulder(rig, pose)
    target = m3.vadd(s, (0.22, -0.2, 0.18))
    plain = ik.solve_arm(pose, rig, ik.IkGoal("left", target))
    _, rot_plain = sk.forward_kinematics(rig, plain)
    _, fa, ha = ik.arm_joint_indices(rig, "left")
    # Ask for a small extra pitch on top of what the plain solve produced.
    want = m3.quat_mul(
        m3.quat_from_axis_angle(m3.quat_rotate(rot_plain[ha], (1.0, 0.0, 0.0)), 0.3),
        rot_plain[ha],
    )
    out = ik.solve_arm(pose, rig, ik.IkGoal("left", target, target_rot=want))
    _, rot_out = sk.forward_kinematics(rig, out)
    gap = m3.quat_angle(m3.quat_mul(rot_out[ha], m3.quat_conj(want)))
    assert gap < 1e-6
    # Hand stays within its hard limits even for unreachable orientations.
    crazy = m3.quat_mul(m3.quat_from_axis_angle((0.0, 1.0, 0.0), 2.8), rot_plain[ha])
    out2 = ik.solve_arm(pose, rig, ik.IkGoal("left", target, target_rot=crazy))
    q = m3.quat_mul(out2.rotations[ha], m3.quat_conj(rig.joints[ha].tpose_rot))
    angles = m3.euler_xyz(q)
    for k in range(3):
        lo, hi = rig.joints[ha].hard_limits[k]
        assert lo - 1e-9 <= angles[k] <= hi + 1e-9


def test_inactive_goal_is_passthrough(rig):
    pose = _base_pose(rig)
    goal = ik.IkGoal("left", (10.0, 10.0, 10.0), active=False)
    out = ik.solve_arm(pose, rig, goal)
    assert out is pose
    assert goal.reached is None


def test_goal_validation():
    with pytest.raises(ValueError):
        ik.IkGoal("middle", (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ik.IkGoal("left", (math.nan, 0.0, 0.0))
