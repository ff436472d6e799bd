"""Built-in character rig and clips.

The default rig is a 15-joint Y-up humanoid: a hips->spine->chest->
upper-chest column, neck+head, two 4-joint arm chains (shoulder, upper arm,
forearm, hand) and two display-only legs. Masses follow the published
rigid-body table; bone lengths, COM offsets and capsule radii are estimates
(flagged on each body) chosen so the shoulder-to-wrist reach is 0.48 m.

Clips are generated procedurally: a looping walk cycle and a quiet standing
pose. Both animate joint rotations only (plus root bob), so bone offsets
stay rigid.
"""

from __future__ import annotations

import math

from .dynamics import RigidBodyDef, capsule_inertia
from .math3d import (
    IDENTITY,
    Z_AXIS,
    quat_from_axis_angle,
    quat_from_euler_xyz,
    quat_mul,
)
from .skeleton import AnimationClip, Capsule3, Joint, Pose, Rig

HIPS, SPINE, CHEST, UPPER_CHEST, NECK_HEAD = 0, 1, 2, 3, 4
SHOULDER_L, UPPER_ARM_L, FOREARM_L, HAND_L = 5, 6, 7, 8
SHOULDER_R, UPPER_ARM_R, FOREARM_R, HAND_R = 9, 10, 11, 12
LEG_L, LEG_R = 13, 14

LEFT_ARM = (SHOULDER_L, UPPER_ARM_L, FOREARM_L, HAND_L)
RIGHT_ARM = (SHOULDER_R, UPPER_ARM_R, FOREARM_R, HAND_R)

# Standing height of the hips origin above the ground plane.
ROOT_HEIGHT = 0.95

# Arm hang angle about the local z axis (magnitude; sign mirrors per side).
_HANG = 1.45


def _body(mass: float, bone_len: float, radius: float) -> RigidBodyDef:
    cyl = max(bone_len - 2.0 * radius, 0.0)
    return RigidBodyDef(
        mass=mass,
        com=(0.0, 0.5 * bone_len, 0.0),
        inertia=capsule_inertia(mass, radius, cyl),
        estimated=True,
    )


def _caps(a_y: float, b_y: float, radius: float) -> Capsule3:
    return Capsule3((0.0, a_y, 0.0), (0.0, b_y, 0.0), radius)


def _lim(*pairs: tuple[float, float]):
    return tuple(pairs)


def _widen(limits, margin: float = 0.15):
    return tuple((lo - margin, hi + margin) for lo, hi in limits)


def _arm_joints(side: str) -> list[Joint]:
    s = 1.0 if side == "l" else -1.0
    # The clavicle joint carries the frame turn that points local Y along the
    # arm; the rest of the chain is identity-relative in the T pose.
    shoulder_rot = quat_from_axis_angle(Z_AXIS, -s * math.pi / 2.0)
    z_soft = (-2.3, 0.5) if side == "l" else (-0.5, 2.3)
    return [
        Joint(
            name=f"shoulder_{side}",
            parent=UPPER_CHEST,
            tpose_pos=(s * 0.06, 0.12, -0.02),
            tpose_rot=shoulder_rot,
            dof=(True, False, True),
            soft_limits=_lim((-0.25, 0.25), (-0.25, 0.25), (-0.25, 0.25)),
            hard_limits=_lim((-0.4, 0.4), (-0.4, 0.4), (-0.4, 0.4)),
            gain_scale=1.0,
            admissible_anchor=True,
            body=_body(1.0, 0.12, 0.05),
        ),
        Joint(
            name=f"upper_arm_{side}",
            parent=SHOULDER_L if side == "l" else SHOULDER_R,
            tpose_pos=(0.0, 0.12, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=_lim((-1.4, 2.2), (-1.5, 1.5), z_soft),
            hard_limits=_widen(_lim((-1.4, 2.2), (-1.5, 1.5), z_soft)),
            gain_scale=1.0,
            admissible_anchor=True,
            body=_body(2.95, 0.26, 0.045),
            collider=_caps(0.02, 0.24, 0.05),
        ),
        Joint(
            name=f"forearm_{side}",
            parent=UPPER_ARM_L if side == "l" else UPPER_ARM_R,
            tpose_pos=(0.0, 0.26, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, False),
            soft_limits=_lim((-0.03, 2.45), (-1.35, 1.35), (-0.2, 0.2)),
            hard_limits=_lim((-0.1, 2.55), (-1.5, 1.5), (-0.3, 0.3)),
            gain_scale=0.5,
            admissible_anchor=True,
            body=_body(1.59, 0.22, 0.04),
            collider=_caps(0.01, 0.21, 0.045),
        ),
        Joint(
            name=f"hand_{side}",
            parent=FOREARM_L if side == "l" else FOREARM_R,
            tpose_pos=(0.0, 0.22, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, False, True),
            soft_limits=_lim((-0.7, 0.7), (-0.4, 0.4), (-0.5, 0.5)),
            hard_limits=_lim((-0.85, 0.85), (-0.5, 0.5), (-0.65, 0.65)),
            gain_scale=0.5,
            admissible_anchor=True,
            body=_body(0.5, 0.16, 0.04),
            collider=_caps(0.0, 0.14, 0.045),
        ),
    ]


def default_rig() -> Rig:
    torso_soft = _lim((-0.45, 0.45), (-0.5, 0.5), (-0.4, 0.4))
    joints: list[Joint] = [
        Joint(
            name="hips",
            parent=-1,
            tpose_pos=(0.0, 0.0, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=torso_soft,
            hard_limits=_widen(torso_soft),
            gain_scale=1.5,
            admissible_anchor=True,
            body=_body(10.56, 0.16, 0.14),
            collider=Capsule3((0.0, -0.05, 0.0), (0.0, 0.12, 0.0), 0.14),
        ),
        Joint(
            name="spine",
            parent=HIPS,
            tpose_pos=(0.0, 0.10, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=torso_soft,
            hard_limits=_widen(torso_soft),
            gain_scale=1.5,
            admissible_anchor=True,
        ),
        Joint(
            name="chest",
            parent=SPINE,
            tpose_pos=(0.0, 0.12, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=torso_soft,
            hard_limits=_widen(torso_soft),
            gain_scale=1.5,
            admissible_anchor=True,
            body=_body(25.2, 0.18, 0.16),
            collider=_caps(0.0, 0.15, 0.16),
        ),
        Joint(
            name="upper_chest",
            parent=CHEST,
            tpose_pos=(0.0, 0.15, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=torso_soft,
            hard_limits=_widen(torso_soft),
            gain_scale=1.5,
            admissible_anchor=True,
            body=_body(10.0, 0.16, 0.15),
            collider=_caps(0.0, 0.14, 0.15),
        ),
        Joint(
            name="neck_head",
            parent=UPPER_CHEST,
            tpose_pos=(0.0, 0.15, 0.0),
            tpose_rot=IDENTITY,
            dof=(True, True, True),
            soft_limits=_lim((-0.8, 0.8), (-0.9, 0.9), (-0.7, 0.7)),
            hard_limits=_widen(_lim((-0.8, 0.8), (-0.9, 0.9), (-0.7, 0.7))),
            gain_scale=0.6,
            admissible_anchor=False,
            body=_body(4.8, 0.24, 0.09),
            collider=_caps(0.02, 0.22, 0.09),
        ),
    ]
    joints.extend(_arm_joints("l"))
    joints.extend(_arm_joints("r"))
    for side, x in (("l", 0.09), ("r", -0.09)):
        joints.append(
            Joint(
                name=f"leg_{side}",
                parent=HIPS,
                tpose_pos=(x, -0.04, 0.0),
                tpose_rot=quat_from_axis_angle(Z_AXIS, math.pi),
                dof=(False, False, False),
                admissible_anchor=False,
                collider=_caps(0.05, 0.80, 0.07),
            )
        )
    return Rig.create("default_upper_body", joints)


def _base_pose(rig: Rig, bob: float = 0.0) -> Pose:
    positions = [j.tpose_pos for j in rig.joints]
    rotations = [j.tpose_rot for j in rig.joints]
    positions[HIPS] = (0.0, ROOT_HEIGHT + bob, 0.0)
    return Pose(positions, rotations)


def _hang_arm(pose: Pose, rig: Rig, side: str, swing: float, elbow: float) -> None:
    s = 1.0 if side == "l" else -1.0
    ua = UPPER_ARM_L if side == "l" else UPPER_ARM_R
    fa = FOREARM_L if side == "l" else FOREARM_R
    rest_ua = rig.joints[ua].tpose_rot
    rest_fa = rig.joints[fa].tpose_rot
    pose.rotations[ua] = quat_mul(
        quat_from_euler_xyz(0.0, swing, -s * _HANG), rest_ua
    )
    pose.rotations[fa] = quat_mul(
        quat_from_euler_xyz(elbow, 0.0, 0.0), rest_fa
    )


def stand_clip(rig: Rig) -> AnimationClip:
    """Two identical frames: quiet stance with arms hanging."""
    frames = []
    for _ in range(2):
        pose = _base_pose(rig)
        _hang_arm(pose, rig, "l", 0.0, 0.25)
        _hang_arm(pose, rig, "r", 0.0, 0.25)
        frames.append(pose)
    return AnimationClip("stand", frame_rate=2.0, frames=tuple(frames), loop=True)


def walk_clip(rig: Rig, frames: int = 40, frame_rate: float = 30.0) -> AnimationClip:
    """Looping procedural walk cycle (rotations plus root bob only)."""
    out = []
    for i in range(frames):
        phase = 2.0 * math.pi * i / frames
        bob = 0.02 * math.sin(2.0 * phase)
        pose = _base_pose(rig, bob)
        sway = 0.05 * math.sin(phase)
        pose.rotations[HIPS] = quat_from_euler_xyz(0.0, sway, 0.018 * math.sin(phase))
        pose.rotations[CHEST] = quat_mul(
            quat_from_euler_xyz(0.02 * math.sin(2.0 * phase), -0.06 * math.sin(phase), 0.0),
            rig.joints[CHEST].tpose_rot,
        )
        arm = 0.30 * math.sin(phase)
        _hang_arm(pose, rig, "l", arm, 0.25 + 0.08 * math.sin(phase + 0.6))
        _hang_arm(pose, rig, "r", -arm, 0.25 - 0.08 * math.sin(phase + 0.6))
        leg = 0.5 * math.sin(phase)
        pose.rotations[LEG_L] = quat_mul(
            quat_from_euler_xyz(leg, 0.0, 0.0), rig.joints[LEG_L].tpose_rot
        )
        pose.rotations[LEG_R] = quat_mul(
            quat_from_euler_xyz(-leg, 0.0, 0.0), rig.joints[LEG_R].tpose_rot
        )
        out.append(pose)
    return AnimationClip("walk", frame_rate=frame_rate, frames=tuple(out), loop=True)
