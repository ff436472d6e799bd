"""Skeleton model: rig topology, poses, clips, anchor partitioning.

The character is a rooted joint tree with the hips at index 0, Y-up
right-handed coordinates, bone lengths in meters. Each joint's local Y axis
runs along its bone in the reference (T) pose. Poses store parent-relative
transforms; clips are uniformly sampled pose sequences.

An *anchor set* splits the tree into a kinematic part (ancestors of every
anchor, driven by clips and IK) and a dynamic part (each anchor and all of
its descendants, driven by physics).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dynamics import RigidBodyDef
from .math3d import Quat, Vec3, quat_conj, quat_mul, quat_rotate, slerp, vadd, vlerp

SCHEMA_VERSION = 1

Limits3 = tuple[tuple[float, float], tuple[float, float], tuple[float, float]]

_FREE: tuple[float, float] = (-3.2, 3.2)


@dataclass(frozen=True)
class Capsule3:
    """Collision capsule in joint-local coordinates (segment + radius)."""

    a: Vec3
    b: Vec3
    radius: float


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    tpose_pos: Vec3  # origin in the parent joint's frame
    tpose_rot: Quat  # reference local orientation b0
    dof: tuple[bool, bool, bool] = (False, False, False)
    hard_limits: Limits3 = (_FREE, _FREE, _FREE)
    soft_limits: Limits3 = (_FREE, _FREE, _FREE)
    gain_scale: float = 1.0  # scales the per-character gain bounds
    admissible_anchor: bool = False
    body: RigidBodyDef | None = None
    collider: Capsule3 | None = None


@dataclass(frozen=True)
class Rig:
    name: str
    joints: tuple[Joint, ...]
    _children: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    _subtrees: tuple[tuple[int, ...], ...] = field(default=(), repr=False)

    @staticmethod
    def create(name: str, joints: Sequence[Joint]) -> "Rig":
        for i, j in enumerate(joints):
            if not (-1 <= j.parent < i):
                raise ValueError(
                    f"joint {j.name!r} at {i} must come after its parent"
                )
        if not joints or joints[0].parent != -1:
            raise ValueError("joint 0 must be the root")
        n = len(joints)
        children: list[list[int]] = [[] for _ in range(n)]
        for i, j in enumerate(joints):
            if j.parent >= 0:
                children[j.parent].append(i)
        subtrees: list[tuple[int, ...]] = [()] * n
        for i in range(n - 1, -1, -1):
            acc = [i]
            for c in children[i]:
                acc.extend(subtrees[c])
            subtrees[i] = tuple(sorted(acc))
        return Rig(
            name=name,
            joints=tuple(joints),
            _children=tuple(tuple(c) for c in children),
            _subtrees=tuple(subtrees),
        )

    def index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def children(self, i: int) -> tuple[int, ...]:
        return self._children[i]

    def subtree(self, i: int) -> tuple[int, ...]:
        """Joint ``i`` and all of its descendants, ascending order."""
        return self._subtrees[i]

    def ancestors(self, i: int) -> list[int]:
        """Strict ancestors from parent up to the root."""
        out = []
        p = self.joints[i].parent
        while p >= 0:
            out.append(p)
            p = self.joints[p].parent
        return out

    def admissible_anchors(self) -> tuple[int, ...]:
        return tuple(
            i for i, j in enumerate(self.joints) if j.admissible_anchor
        )


@dataclass
class Pose:
    """Parent-relative joint transforms; index 0 carries the root motion."""

    positions: list[Vec3]
    rotations: list[Quat]

    def copy(self) -> "Pose":
        return Pose(list(self.positions), list(self.rotations))


@dataclass(frozen=True)
class AnimationClip:
    name: str
    frame_rate: float
    frames: tuple[Pose, ...]
    loop: bool = True


class AnchorError(ValueError):
    pass


def validate_anchors(rig: Rig, anchors: Iterable[int]) -> tuple[int, ...]:
    """Check admissibility and that no anchor is an ancestor of another."""
    anchor_list = sorted(set(anchors))
    for a in anchor_list:
        if not (0 <= a < len(rig.joints)):
            raise AnchorError(f"anchor index {a} out of range")
        if not rig.joints[a].admissible_anchor:
            raise AnchorError(f"joint {rig.joints[a].name!r} is not an admissible anchor")
    for a in anchor_list:
        for b in anchor_list:
            if a != b and b in rig.subtree(a):
                raise AnchorError(
                    f"anchor {rig.joints[a].name!r} is an ancestor of "
                    f"{rig.joints[b].name!r}"
                )
    return tuple(anchor_list)


def partition(rig: Rig, anchors: Iterable[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split joints into (kinematic, dynamic) index tuples."""
    anchor_list = validate_anchors(rig, anchors)
    dynamic: set[int] = set()
    for a in anchor_list:
        dynamic.update(rig.subtree(a))
    kinematic = tuple(i for i in range(len(rig.joints)) if i not in dynamic)
    return kinematic, tuple(sorted(dynamic))


def forward_kinematics(rig: Rig, pose: Pose) -> tuple[list[Vec3], list[Quat]]:
    """World positions and orientations for every joint."""
    n = len(rig.joints)
    pos: list[Vec3] = [None] * n  # type: ignore[list-item]
    rot: list[Quat] = [None] * n  # type: ignore[list-item]
    for i, j in enumerate(rig.joints):
        if j.parent < 0:
            pos[i] = pose.positions[i]
            rot[i] = pose.rotations[i]
        else:
            p = j.parent
            pos[i] = vadd(pos[p], quat_rotate(rot[p], pose.positions[i]))
            rot[i] = quat_mul(rot[p], pose.rotations[i])
    return pos, rot


def local_rotation(b: Quat, b0: Quat) -> Quat:
    """Rotation of a joint away from its reference orientation, q = b * conj(b0)."""
    return quat_mul(b, quat_conj(b0))


def sample_clip(clip: AnimationClip, t: float) -> Pose:
    """Interpolated pose at time ``t`` (seconds from clip start).

    Looping clips wrap over the last->first frame interval so sampling is
    continuous across the seam; non-looping clips clamp at the final frame.
    """
    if t < 0.0:
        raise ValueError("clip time must be non-negative")
    n = len(clip.frames)
    if n < 2:
        raise ValueError("clips need at least two frames")
    f = t * clip.frame_rate
    if clip.loop:
        f = f % float(n)
        i0 = int(f)
        i1 = (i0 + 1) % n
        s = f - i0
    else:
        if f >= n - 1:
            return clip.frames[n - 1].copy()
        i0 = int(f)
        i1 = i0 + 1
        s = f - i0
    a, b = clip.frames[i0], clip.frames[i1]
    if s == 0.0:
        return a.copy()
    return Pose(
        positions=[vlerp(pa, pb, s) for pa, pb in zip(a.positions, b.positions)],
        rotations=[slerp(qa, qb, s) for qa, qb in zip(a.rotations, b.rotations)],
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _vec(v) -> Vec3:
    x, y, z = v
    return (float(x), float(y), float(z))


def _quat(q) -> Quat:
    w, x, y, z = q
    return (float(w), float(x), float(y), float(z))


def rig_to_dict(rig: Rig) -> dict:
    joints = []
    for j in rig.joints:
        d: dict = {
            "name": j.name,
            "parent": j.parent,
            "tpose_pos": list(j.tpose_pos),
            "tpose_rot": list(j.tpose_rot),
            "dof": list(j.dof),
            "hard_limits": [list(l) for l in j.hard_limits],
            "soft_limits": [list(l) for l in j.soft_limits],
            "gain_scale": j.gain_scale,
            "admissible_anchor": j.admissible_anchor,
        }
        if j.body is not None:
            d["body"] = {
                "mass": j.body.mass,
                "com": list(j.body.com),
                "inertia": list(j.body.inertia),
                "estimated": j.body.estimated,
            }
        if j.collider is not None:
            d["collider"] = {
                "a": list(j.collider.a),
                "b": list(j.collider.b),
                "radius": j.collider.radius,
            }
        joints.append(d)
    return {"schema": SCHEMA_VERSION, "name": rig.name, "joints": joints}


def rig_from_dict(data: dict) -> Rig:
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported rig schema: {data.get('schema')!r}")
    joints = []
    for d in data["joints"]:
        body = None
        if "body" in d:
            bd = d["body"]
            body = RigidBodyDef(
                mass=float(bd["mass"]),
                com=_vec(bd["com"]),
                inertia=_vec(bd["inertia"]),
                estimated=bool(bd.get("estimated", False)),
            )
        collider = None
        if "collider" in d:
            cd = d["collider"]
            collider = Capsule3(_vec(cd["a"]), _vec(cd["b"]), float(cd["radius"]))
        joints.append(
            Joint(
                name=d["name"],
                parent=int(d["parent"]),
                tpose_pos=_vec(d["tpose_pos"]),
                tpose_rot=_quat(d["tpose_rot"]),
                dof=tuple(bool(x) for x in d["dof"]),  # type: ignore[arg-type]
                hard_limits=tuple(  # type: ignore[arg-type]
                    (float(l[0]), float(l[1])) for l in d["hard_limits"]
                ),
                soft_limits=tuple(  # type: ignore[arg-type]
                    (float(l[0]), float(l[1])) for l in d["soft_limits"]
                ),
                gain_scale=float(d.get("gain_scale", 1.0)),
                admissible_anchor=bool(d.get("admissible_anchor", False)),
                body=body,
                collider=collider,
            )
        )
    return Rig.create(data.get("name", "rig"), joints)


def clip_to_dict(clip: AnimationClip) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "name": clip.name,
        "frame_rate": clip.frame_rate,
        "loop": clip.loop,
        "frames": [
            {
                "positions": [list(p) for p in f.positions],
                "rotations": [list(q) for q in f.rotations],
            }
            for f in clip.frames
        ],
    }


def clip_from_dict(data: dict) -> AnimationClip:
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported clip schema: {data.get('schema')!r}")
    frames = tuple(
        Pose(
            positions=[_vec(p) for p in f["positions"]],
            rotations=[_quat(q) for q in f["rotations"]],
        )
        for f in data["frames"]
    )
    return AnimationClip(
        name=data.get("name", "clip"),
        frame_rate=float(data["frame_rate"]),
        frames=frames,
        loop=bool(data.get("loop", True)),
    )


def load_rig(path: str) -> Rig:
    with open(path, "r", encoding="utf-8") as fh:
        return rig_from_dict(json.load(fh))


def save_rig(rig: Rig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rig_to_dict(rig), fh, indent=1)


def load_clip(path: str) -> AnimationClip:
    with open(path, "r", encoding="utf-8") as fh:
        return clip_from_dict(json.load(fh))


def save_clip(clip: AnimationClip, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clip_to_dict(clip), fh, indent=1)
