"""Reduced-coordinate rigid-chain dynamics.

Articulated figures (character limb subtrees, obstacle stalks) are stepped
as trees of 1..3 rotational degrees of freedom per joint, integrated with
semi-implicit Euler at a fixed substep. Per axis the model is

    I_u * dd(theta_u) = tau_actuation + tau_external + tau_gravity + tau_limit

with ``I_u`` the scalar inertia of the distal subtree about the axis line
through the joint, recomputed once per render frame (diagonal approximation;
gyroscopic and Coriolis coupling are deliberately dropped). Joint angles are
principal-valued: the local rotation is refactored into ordered xyz angles
every step, so a joint that is driven past pi wraps. Limb hard limits keep
character joints far from that regime; free-swinging obstacle links should
not be parked upside down.

The kinematic side of the figure enters only through the chain's base
transform, which the caller refreshes every frame (moving-frame boundary
condition; fictitious forces from base acceleration are neglected).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .math3d import (
    Quat,
    Vec3,
    euler_xyz,
    quat_from_euler_xyz,
    quat_conj,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    vadd,
    vcross,
    vdot,
    vscale,
    vsub,
)

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from .skeleton import Pose, Rig

GRAVITY: Vec3 = (0.0, -9.81, 0.0)

# Hard-limit penalty (spring/damper engaged only outside the range).
K_LIMIT = 500.0
C_LIMIT = 20.0

# Floor for per-axis effective inertia; keeps massless connector links and
# near-axis body alignments from producing unbounded accelerations.
I_MIN = 1e-3

_AXES: tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class SimulationFault(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class RigidBodyDef:
    """Rigid body attached to a joint.

    ``com`` and the diagonal ``inertia`` (about the com) are expressed in the
    owning joint's local frame, which rotates with the joint. ``estimated``
    marks geometry that was inferred rather than published.
    """

    mass: float
    com: Vec3
    inertia: Vec3
    estimated: bool = False


def capsule_inertia(mass: float, radius: float, length: float) -> Vec3:
    """Diagonal inertia of a solid capsule, long axis along local Y.

    Cylinder of the given length plus two hemispherical caps; mass is split
    by volume. Degenerates gracefully to a sphere when length is zero.
    """
    r2 = radius * radius
    vc = math.pi * r2 * length
    vs = (4.0 / 3.0) * math.pi * r2 * radius
    vol = vc + vs
    if vol <= 0.0:
        raise ValueError("capsule has no volume")
    mc = mass * vc / vol
    ms = mass * vs / vol
    # Cylinder about its center.
    iy = 0.5 * mc * r2
    ix = mc * (3.0 * r2 + length * length) / 12.0
    # Hemisphere pair = sphere about its own com, shifted to the cap centers.
    h = 0.5 * length
    is_own = 0.4 * ms * r2
    iy += is_own
    ix += is_own + ms * h * h
    return (ix, iy, ix)


@dataclass(frozen=True)
class ChainNode:
    name: str
    parent: int  # index within the chain, -1 for the base
    offset: Vec3  # joint origin in the parent joint's frame
    rest_rot: Quat  # reference-pose local orientation b0
    dof: tuple[bool, bool, bool]
    hard_limits: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    body: RigidBodyDef | None = None
    source: int = -1  # rig joint index (or asset link index) this node mirrors


@dataclass(frozen=True)
class ChainDef:
    nodes: tuple[ChainNode, ...]
    gravity_scale: float = 1.0
    # Derived topology, filled by build_chain().
    subtree: tuple[tuple[int, ...], ...] = field(default=())
    ancestry: tuple[tuple[int, ...], ...] = field(default=())


def build_chain(nodes: Sequence[ChainNode], gravity_scale: float = 1.0) -> ChainDef:
    """Validate topological order and precompute subtree/ancestor tables."""
    for i, n in enumerate(nodes):
        if not (-1 <= n.parent < i):
            raise ValueError(f"chain node {i} has invalid parent {n.parent}")
    count = len(nodes)
    children: list[list[int]] = [[] for _ in range(count)]
    for i, n in enumerate(nodes):
        if n.parent >= 0:
            children[n.parent].append(i)
    subtree: list[tuple[int, ...]] = [()] * count
    for i in range(count - 1, -1, -1):
        acc: list[int] = [i]
        for c in children[i]:
            acc.extend(subtree[c])
        subtree[i] = tuple(sorted(acc))
    ancestry: list[tuple[int, ...]] = []
    for i, n in enumerate(nodes):
        chain: list[int] = []
        p = i
        while p >= 0:
            chain.append(p)
            p = nodes[p].parent
        ancestry.append(tuple(chain))
    return ChainDef(
        nodes=tuple(nodes),
        gravity_scale=gravity_scale,
        subtree=tuple(subtree),
        ancestry=tuple(ancestry),
    )


@dataclass
class ChainState:
    """Mutable integration state; treat instances as frozen between steps."""

    base_pos: Vec3
    base_rot: Quat
    rot: list[Quat]  # local orientation b per node
    vel: list[Vec3]  # per-axis angle rates
    base_vel: Vec3 = (0.0, 0.0, 0.0)

    def copy(self) -> "ChainState":
        return ChainState(
            base_pos=self.base_pos,
            base_rot=self.base_rot,
            rot=list(self.rot),
            vel=list(self.vel),
            base_vel=self.base_vel,
        )


def rest_state(cdef: ChainDef, base_pos: Vec3, base_rot: Quat) -> ChainState:
    return ChainState(
        base_pos=base_pos,
        base_rot=base_rot,
        rot=[n.rest_rot for n in cdef.nodes],
        vel=[(0.0, 0.0, 0.0) for _ in cdef.nodes],
    )


@dataclass
class ExternalLoad:
    """Loads for one substep.

    ``torques`` are per-node torque components about the node's local axes
    and act on that node only. ``forces`` are world-space point forces
    ``(node, point, force)``; each propagates to the loaded node and all of
    its ancestors as generalized torque.
    """

    torques: dict[int, Vec3] = field(default_factory=dict)
    forces: list[tuple[int, Vec3, Vec3]] = field(default_factory=list)


def chain_transforms(
    cdef: ChainDef, state: ChainState
) -> tuple[list[Vec3], list[Quat], list[Quat]]:
    """World joint origins, world joint rotations, and parent-frame rotations."""
    n = len(cdef.nodes)
    pos: list[Vec3] = [None] * n  # type: ignore[list-item]
    rot: list[Quat] = [None] * n  # type: ignore[list-item]
    parent_rot: list[Quat] = [None] * n  # type: ignore[list-item]
    for i, node in enumerate(cdef.nodes):
        if node.parent < 0:
            pr, pp = state.base_rot, state.base_pos
        else:
            pr, pp = rot[node.parent], pos[node.parent]
        parent_rot[i] = pr
        pos[i] = vadd(pp, quat_rotate(pr, node.offset))
        rot[i] = quat_mul(pr, state.rot[i])
    return pos, rot, parent_rot


def joint_angles(cdef: ChainDef, state: ChainState) -> list[Vec3]:
    """Ordered xyz angles of each node's rotation away from its rest pose."""
    return [
        euler_xyz(quat_mul(state.rot[i], quat_conj(cdef.nodes[i].rest_rot)))
        for i in range(len(cdef.nodes))
    ]


def _axis_inertia_terms(
    body: RigidBodyDef, body_rot: Quat, r: Vec3, u: Vec3
) -> float:
    """Subtree-body contribution to the inertia about axis line u through a joint."""
    rows = quat_to_matrix(body_rot)
    # Columns of R are the body axes in world coordinates.
    cx = (rows[0][0], rows[1][0], rows[2][0])
    cy = (rows[0][1], rows[1][1], rows[2][1])
    cz = (rows[0][2], rows[1][2], rows[2][2])
    ix, iy, iz = body.inertia
    own = (
        ix * vdot(u, cx) ** 2 + iy * vdot(u, cy) ** 2 + iz * vdot(u, cz) ** 2
    )
    ru = vdot(r, u)
    return own + body.mass * (vdot(r, r) - ru * ru)


def effective_inertias(cdef: ChainDef, state: ChainState) -> list[Vec3]:
    """Per-node, per-axis scalar inertia of the distal subtree."""
    pos, rot, parent_rot = chain_transforms(cdef, state)
    coms: list[Vec3 | None] = []
    for i, node in enumerate(cdef.nodes):
        if node.body is None:
            coms.append(None)
        else:
            coms.append(vadd(pos[i], quat_rotate(rot[i], node.body.com)))
    out: list[Vec3] = []
    for i, node in enumerate(cdef.nodes):
        vals = []
        for k in range(3):
            if not node.dof[k]:
                vals.append(I_MIN)
                continue
            u = quat_rotate(parent_rot[i], _AXES[k])
            total = 0.0
            for j in cdef.subtree[i]:
                body = cdef.nodes[j].body
                if body is None:
                    continue
                r = vsub(coms[j], pos[i])  # type: ignore[arg-type]
                total += _axis_inertia_terms(body, rot[j], r, u)
            vals.append(max(total, I_MIN))
        out.append((vals[0], vals[1], vals[2]))
    return out


def limit_penalty(
    theta: float,
    rate: float,
    lo: float,
    hi: float,
    k: float = K_LIMIT,
    c: float = C_LIMIT,
) -> float:
    """Spring-damper torque outside [lo, hi]; zero inside the range."""
    if theta < lo:
        return k * (lo - theta) - c * rate
    if theta > hi:
        return k * (hi - theta) - c * rate
    return 0.0


def pd_torque(kp: float, kd: float, target: float, theta: float, rate: float) -> float:
    return kp * (target - theta) - kd * rate


def gravity_torque_at_pose(
    rig: "Rig", pose: "Pose", joint: int, gravity: Vec3 = GRAVITY
) -> Vec3:
    """World-frame gravity torque about a joint from its distal bodies.

    Evaluated on the skeleton at an arbitrary pose (the control layer uses
    the target pose). Returns the summed ``r x (m g)`` over every body at or
    below ``joint`` in the hierarchy.
    """
    from .skeleton import forward_kinematics  # local import, no cycle at module load

    pos_w, rot_w = forward_kinematics(rig, pose)
    origin = pos_w[joint]
    total = (0.0, 0.0, 0.0)
    for j in rig.subtree(joint):
        body = rig.joints[j].body
        if body is None:
            continue
        com = vadd(pos_w[j], quat_rotate(rot_w[j], body.com))
        total = vadd(total, vcross(vsub(com, origin), vscale(gravity, body.mass)))
    return total


def step_chain(
    cdef: ChainDef,
    state: ChainState,
    dt: float,
    torques: Sequence[Vec3] | None = None,
    load: ExternalLoad | None = None,
    gravity: Vec3 = GRAVITY,
    axis_inertia: Sequence[Vec3] | None = None,
) -> ChainState:
    """Advance one substep and return the new state.

    ``torques`` are actuation components about each node's local axes
    (controller output). ``axis_inertia`` may carry inertias precomputed at
    frame cadence; when omitted they are recomputed here.
    """
    if not (0.0 < dt <= 1.0 / 30.0):
        raise ValueError(f"dt out of range: {dt}")
    n = len(cdef.nodes)
    pos, rot, parent_rot = chain_transforms(cdef, state)
    if axis_inertia is None:
        axis_inertia = effective_inertias(cdef, state)

    g = vscale(gravity, cdef.gravity_scale)
    gravity_on = vdot(g, g) > 0.0

    # World torque accumulated per node from point forces and gravity.
    world_torque: list[Vec3] = [(0.0, 0.0, 0.0)] * n
    if gravity_on:
        for j, node in enumerate(cdef.nodes):
            if node.body is None:
                continue
            com = vadd(pos[j], quat_rotate(rot[j], node.body.com))
            fg = vscale(g, node.body.mass)
            for a in cdef.ancestry[j]:
                world_torque[a] = vadd(
                    world_torque[a], vcross(vsub(com, pos[a]), fg)
                )
    if load is not None:
        for j, point, force in load.forces:
            for a in cdef.ancestry[j]:
                world_torque[a] = vadd(
                    world_torque[a], vcross(vsub(point, pos[a]), force)
                )

    new_rot: list[Quat] = []
    new_vel: list[Vec3] = []
    for i, node in enumerate(cdef.nodes):
        q = quat_mul(state.rot[i], quat_conj(node.rest_rot))
        angles = euler_xyz(q)
        rates = state.vel[i]
        tq = torques[i] if torques is not None else (0.0, 0.0, 0.0)
        ext = load.torques.get(i, (0.0, 0.0, 0.0)) if load is not None else (0.0, 0.0, 0.0)
        wt = world_torque[i]
        out_angles = [0.0, 0.0, 0.0]
        out_rates = [0.0, 0.0, 0.0]
        for k in range(3):
            if not node.dof[k]:
                continue
            u = quat_rotate(parent_rot[i], _AXES[k])
            lo, hi = node.hard_limits[k]
            tau = (
                tq[k]
                + ext[k]
                + vdot(wt, u)
                + limit_penalty(angles[k], rates[k], lo, hi)
            )
            acc = tau / axis_inertia[i][k]
            v = rates[k] + acc * dt
            out_rates[k] = v
            out_angles[k] = angles[k] + v * dt
        b = quat_normalize(
            quat_mul(
                quat_from_euler_xyz(out_angles[0], out_angles[1], out_angles[2]),
                node.rest_rot,
            )
        )
        if not all(math.isfinite(c) for c in b) or not all(
            math.isfinite(c) for c in out_rates
        ):
            raise SimulationFault(
                f"non-finite state at chain node {node.name!r}",
                {"node": node.name, "angles": out_angles, "rates": out_rates},
            )
        new_rot.append(b)
        new_vel.append((out_rates[0], out_rates[1], out_rates[2]))

    return ChainState(
        base_pos=state.base_pos,
        base_rot=state.base_rot,
        rot=new_rot,
        vel=new_vel,
        base_vel=state.base_vel,
    )


def point_velocity(
    cdef: ChainDef,
    state: ChainState,
    transforms: tuple[list[Vec3], list[Quat], list[Quat]],
    node: int,
    point: Vec3,
) -> Vec3:
    """World velocity of a point riding on ``node`` (base motion included)."""
    pos, _rot, parent_rot = transforms
    v = state.base_vel
    for a in cdef.ancestry[node]:
        rates = state.vel[a]
        for k in range(3):
            if not cdef.nodes[a].dof[k] or rates[k] == 0.0:
                continue
            u = quat_rotate(parent_rot[a], _AXES[k])
            v = vadd(v, vscale(vcross(u, vsub(point, pos[a])), rates[k]))
    return v


def chain_from_subtree(rig: "Rig", anchor: int) -> tuple[ChainDef, list[int]]:
    """Build a dynamic chain covering ``anchor`` and all its descendants.

    Returns the chain and the rig-joint index of each node (node 0 is the
    anchor; its parent frame is the chain base, supplied per frame from the
    kinematic skeleton).
    """
    joints = list(rig.subtree(anchor))
    index_of = {j: i for i, j in enumerate(joints)}
    nodes = []
    for j in joints:
        rj = rig.joints[j]
        parent = -1 if j == anchor else index_of[rj.parent]
        # A root anchor's base transform already carries the full root
        # motion, so its node offset collapses to zero.
        offset = (0.0, 0.0, 0.0) if (j == anchor and rj.parent < 0) else rj.tpose_pos
        nodes.append(
            ChainNode(
                name=rj.name,
                parent=parent,
                offset=offset,
                rest_rot=rj.tpose_rot,
                dof=rj.dof,
                hard_limits=rj.hard_limits,
                body=rj.body,
                source=j,
            )
        )
    return build_chain(nodes), joints
