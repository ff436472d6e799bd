"""Obstacle assets, collision proxies, and two-way contact response.

Environment pieces come in three flavors: PD-rigged plants and fences that
stand themselves back up around a rest pose (their chains integrate without
gravity so the rest pose is the unforced equilibrium), hanging objects that
swing freely under gravity with a touch of drag, and ballistic projectiles.
Every link carries a primitive collision proxy (sphere, capsule, or box);
contact with the character's limb capsules produces equal-and-opposite
penalty forces so both sides feel the touch.

Assets are described by a JSON library pre-populated with the published
mass/kp/kd table; geometry (lengths, radii, com heights) is estimated and
marked as such on the rigid bodies. Scenario files reference kinds and may
override per-instance mass as well as the mass/velocity the character is
*told* (spoofing those is how surprise-reaction scenarios are built).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple, Sequence

from . import dynamics as dyn
from .math3d import (
    IDENTITY,
    Quat,
    Vec3,
    quat_conj,
    quat_from_euler_xyz,
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

# Contact penalty model.
K_CONTACT = 2000.0
C_CONTACT = 50.0
FRICTION_MU = 0.6
SLIP_SPEED = 0.05  # m/s; friction ramps in linearly below this slip

# Obstacles beyond this distance from the character are frozen in place.
ACTIVITY_RADIUS = 4.0
SLEEP_RATE_EPS = 5e-3  # rad/s: below this a chain counts as quiescent
SLEEP_HOLD = 0.25  # s of sustained quiescence before a chain suspends

HANGING_DRAG = 0.05  # N*m*s/rad, per axis, for free-swinging kinds

PD_KINDS = (
    "SunflowerLarge",
    "SunflowerSmall",
    "Bush",
    "BananaTree",
    "TreeBranch",
    "Fence",
    "FenceWithDoor",
)
HANGING_KINDS = ("HangingBucket", "Swing", "HangingFruit")
KNOWN_KINDS = PD_KINDS + HANGING_KINDS + ("Projectile", "Custom")

_UP: Vec3 = (0.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# collision shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float


@dataclass(frozen=True)
class Capsule:
    a: Vec3
    b: Vec3
    radius: float


@dataclass(frozen=True)
class Box:
    center: Vec3
    half_extents: Vec3
    rotation: Quat = IDENTITY


Shape = Sphere | Capsule | Box


class ClosestPoint(NamedTuple):
    point: Vec3
    normal: Vec3
    distance: float  # signed; negative when the query point is inside
    degenerate: bool = False


def segment_point(a: Vec3, b: Vec3, p: Vec3) -> tuple[Vec3, float]:
    ab = vsub(b, a)
    denom = vdot(ab, ab)
    if denom < 1e-18:
        return a, 0.0
    t = min(max(vdot(vsub(p, a), ab) / denom, 0.0), 1.0)
    return vadd(a, vscale(ab, t)), t


def _about_point(center: Vec3, radius: float, p: Vec3, fallback: Vec3) -> ClosestPoint:
    d = vsub(p, center)
    dist = vnorm(d)
    if dist < 1e-12:
        return ClosestPoint(
            vadd(center, vscale(fallback, radius)), fallback, -radius, True
        )
    n = vscale(d, 1.0 / dist)
    return ClosestPoint(vadd(center, vscale(n, radius)), n, dist - radius, False)


def closest_point(shape: Shape, p: Vec3) -> ClosestPoint:
    """Closest surface point, outward normal, and signed distance to ``p``."""
    if isinstance(shape, Sphere):
        return _about_point(shape.center, shape.radius, p, _UP)
    if isinstance(shape, Capsule):
        axis = vsub(shape.b, shape.a)
        on_seg, _ = segment_point(shape.a, shape.b, p)
        n = vnorm(axis)
        if n > 1e-12:
            perp = vcross(axis, _UP)
            fallback = (
                vnormalize(perp) if vnorm(perp) > 1e-9 else (1.0, 0.0, 0.0)
            )
        else:
            fallback = _UP
        return _about_point(on_seg, shape.radius, p, fallback)
    if isinstance(shape, Box):
        q = quat_rotate(quat_conj(shape.rotation), vsub(p, shape.center))
        hx, hy, hz = shape.half_extents
        cx = min(max(q[0], -hx), hx)
        cy = min(max(q[1], -hy), hy)
        cz = min(max(q[2], -hz), hz)
        inside = (cx, cy, cz) == q
        if not inside:
            delta = vsub(q, (cx, cy, cz))
            dist = vnorm(delta)
            n_local = vscale(delta, 1.0 / dist)
            point_local = (cx, cy, cz)
        else:
            # Inside: exit through the nearest face.
            gaps = (hx - abs(q[0]), hy - abs(q[1]), hz - abs(q[2]))
            k = min(range(3), key=gaps.__getitem__)
            sign = 1.0 if q[k] >= 0.0 else -1.0
            n_local = tuple(sign if i == k else 0.0 for i in range(3))
            point_local = tuple(
                sign * shape.half_extents[k] if i == k else q[i] for i in range(3)
            )
            dist = -gaps[k]
        return ClosestPoint(
            vadd(shape.center, quat_rotate(shape.rotation, point_local)),
            quat_rotate(shape.rotation, n_local),
            dist,
            False,
        )
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def segment_segment(
    p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3
) -> tuple[Vec3, Vec3]:
    """Closest points between two segments (standard clamped solve)."""
    d1 = vsub(q1, p1)
    d2 = vsub(q2, p2)
    r = vsub(p1, p2)
    a = vdot(d1, d1)
    e = vdot(d2, d2)
    f = vdot(d2, r)
    if a < 1e-18 and e < 1e-18:
        return p1, p2
    if a < 1e-18:
        t = min(max(f / e, 0.0), 1.0)
        return p1, vadd(p2, vscale(d2, t))
    c = vdot(d1, r)
    if e < 1e-18:
        s = min(max(-c / a, 0.0), 1.0)
        return vadd(p1, vscale(d1, s)), p2
    b = vdot(d1, d2)
    denom = a * e - b * b
    s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-18 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    return vadd(p1, vscale(d1, s)), vadd(p2, vscale(d2, t))


# ---------------------------------------------------------------------------
# contacts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Contact:
    point: Vec3
    normal: Vec3  # unit, from obstacle toward character
    depth: float
    body_a: int  # character joint index
    body_b: tuple[int, int]  # (obstacle id, link index)


def _capsule_vs_shape(cap: Capsule, shape: Shape) -> tuple[float, Vec3, Vec3] | None:
    """Depth, normal (obstacle->character), surface point; None if separate."""
    if isinstance(shape, Sphere):
        on_seg, _ = segment_point(cap.a, cap.b, shape.center)
        d = vsub(on_seg, shape.center)
        dist = vnorm(d)
        n = vscale(d, 1.0 / dist) if dist > 1e-12 else _UP
        depth = cap.radius + shape.radius - dist
        if depth <= 0.0:
            return None
        return depth, n, vadd(shape.center, vscale(n, shape.radius))
    if isinstance(shape, Capsule):
        pc, po = segment_segment(cap.a, cap.b, shape.a, shape.b)
        d = vsub(pc, po)
        dist = vnorm(d)
        n = vscale(d, 1.0 / dist) if dist > 1e-12 else _UP
        depth = cap.radius + shape.radius - dist
        if depth <= 0.0:
            return None
        return depth, n, vadd(po, vscale(n, shape.radius))
    if isinstance(shape, Box):
        # Signed distance to a convex set is convex along the segment, so a
        # ternary search on the capsule axis finds the global minimum.
        lo, hi = 0.0, 1.0
        ab = vsub(cap.b, cap.a)

        def sd(t: float) -> float:
            return closest_point(shape, vadd(cap.a, vscale(ab, t))).distance

        for _ in range(48):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            if sd(m1) <= sd(m2):
                hi = m2
            else:
                lo = m1
        t = 0.5 * (lo + hi)
        cp = closest_point(shape, vadd(cap.a, vscale(ab, t)))
        depth = cap.radius - cp.distance
        if depth <= 0.0:
            return None
        return depth, cp.normal, cp.point
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def contact_response(
    contact: Contact, relative_velocity: Vec3
) -> tuple[Vec3, Vec3]:
    """Penalty force pair from one contact.

    ``relative_velocity`` is character minus obstacle at the contact point.
    Returns (force on character, force on obstacle); the pair always sums to
    zero.
    """
    n = contact.normal
    v_n = vdot(relative_velocity, n)
    f_n = K_CONTACT * contact.depth - C_CONTACT * v_n
    if f_n < 0.0:
        f_n = 0.0  # the penalty never pulls the bodies together
    force = vscale(n, f_n)
    v_t = vsub(relative_velocity, vscale(n, v_n))
    slip = vnorm(v_t)
    if slip > 1e-9 and f_n > 0.0:
        mag = FRICTION_MU * f_n * min(slip / SLIP_SPEED, 1.0)
        force = vadd(force, vscale(v_t, -mag / slip))
    return force, vscale(force, -1.0)


# ---------------------------------------------------------------------------
# asset library
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectileDef:
    radius: float
    mass: float


@dataclass(frozen=True)
class AssetDef:
    kind: str
    mass: float  # published total
    kp: float | None  # None for hanging/projectile kinds
    kd: float | None
    hanging: bool
    links: tuple[dyn.ChainNode, ...] = ()
    colliders: tuple[tuple[int, Shape], ...] = ()
    projectile: ProjectileDef | None = None
    bound: float = 1.0  # broadphase radius around the base


@dataclass
class ObstacleInstance:
    oid: int
    adef: AssetDef
    cdef: dyn.ChainDef | None
    state: dyn.ChainState | None
    pos: Vec3 = (0.0, 0.0, 0.0)  # projectile center (chains use state.base_pos)
    vel: Vec3 = (0.0, 0.0, 0.0)
    frozen: bool = False
    asleep: bool = False  # quiescent chain suspended until the next load
    quiet_s: float = 0.0
    mass: float = 0.0  # actual instance mass
    expected_mass: float = 0.0  # what the character is told
    expected_speed: float | None = None  # None: perceive the true velocity
    label: str = ""

    def base_position(self) -> Vec3:
        if self.state is not None:
            return self.state.base_pos
        return self.pos


def _vec(x) -> Vec3:
    return (float(x[0]), float(x[1]), float(x[2]))


def shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "center": list(shape.center),
                "radius": shape.radius}
    if isinstance(shape, Capsule):
        return {"type": "capsule", "a": list(shape.a), "b": list(shape.b),
                "radius": shape.radius}
    if isinstance(shape, Box):
        return {"type": "box", "center": list(shape.center),
                "half_extents": list(shape.half_extents),
                "rot": list(shape.rotation)}
    raise TypeError(f"unsupported shape {type(shape).__name__}")


def _shape_from_dict(d: dict) -> Shape:
    t = d["type"]
    if t == "sphere":
        return Sphere(_vec(d["center"]), float(d["radius"]))
    if t == "capsule":
        return Capsule(_vec(d["a"]), _vec(d["b"]), float(d["radius"]))
    if t == "box":
        rot = IDENTITY
        if "euler" in d:
            rot = quat_from_euler_xyz(*d["euler"])
        return Box(_vec(d["center"]), _vec(d["half_extents"]), rot)
    raise ValueError(f"unknown collider type {t!r}")


def _shape_extent(shape: Shape) -> float:
    if isinstance(shape, Sphere):
        return vnorm(shape.center) + shape.radius
    if isinstance(shape, Capsule):
        return max(vnorm(shape.a), vnorm(shape.b)) + shape.radius
    return vnorm(shape.center) + vnorm(shape.half_extents)


def asset_from_dict(d: dict) -> AssetDef:
    kind = d["kind"]
    if kind not in KNOWN_KINDS:
        raise ValueError(f"unknown asset kind {kind!r}")
    if kind == "Projectile":
        return AssetDef(
            kind=kind,
            mass=float(d["mass"]),
            kp=None,
            kd=None,
            hanging=False,
            projectile=ProjectileDef(float(d["radius"]), float(d["mass"])),
            bound=float(d["radius"]) + 0.1,
        )
    hanging = bool(d.get("hanging", False))
    links: list[dyn.ChainNode] = []
    colliders: list[tuple[int, Shape]] = []
    reach = 0.0
    extent = 0.0
    for i, ld in enumerate(d["links"]):
        mass = float(ld.get("mass", 0.0))
        body = None
        if mass > 0.0:
            if "inertia" in ld:
                inertia = _vec(ld["inertia"])
            else:
                inertia = dyn.capsule_inertia(
                    mass, float(ld["thickness"]), float(ld["body_length"])
                )
            body = dyn.RigidBodyDef(mass, _vec(ld["com"]), inertia, estimated=True)
        limits = tuple(
            (float(lo), float(hi))
            for lo, hi in ld.get("limits", [[-2.5, 2.5]] * 3)
        )
        links.append(
            dyn.ChainNode(
                name=ld["name"],
                parent=int(ld["parent"]),
                offset=_vec(ld["offset"]),
                rest_rot=quat_from_euler_xyz(*ld.get("rest_euler", (0, 0, 0))),
                dof=tuple(bool(x) for x in ld["dof"]),
                hard_limits=limits,  # type: ignore[arg-type]
                body=body,
                source=i,
            )
        )
        reach += vnorm(_vec(ld["offset"]))
        raw_shapes = ld.get("colliders", [])
        if "collider" in ld:
            raw_shapes = [ld["collider"], *raw_shapes]
        for sd in raw_shapes:
            shape = _shape_from_dict(sd)
            colliders.append((i, shape))
            extent = max(extent, _shape_extent(shape))
    return AssetDef(
        kind=kind,
        mass=float(d["mass"]),
        kp=None if hanging else float(d["kp"]),
        kd=float(d["kd"]) if "kd" in d and d["kd"] is not None else None,
        hanging=hanging,
        links=tuple(links),
        colliders=tuple(colliders),
        bound=reach + extent + 0.5,
    )


def load_asset_library(path: str | None = None) -> dict[str, AssetDef]:
    if path is None:
        text = (
            resources.files("reflexrig").joinpath("data/assets.json").read_text()
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    lib = {}
    for entry in raw["assets"]:
        adef = asset_from_dict(entry)
        lib[adef.kind] = adef
    return lib


def _scaled_links(
    links: tuple[dyn.ChainNode, ...], scale: float
) -> tuple[dyn.ChainNode, ...]:
    if scale == 1.0:
        return links
    out = []
    for n in links:
        body = n.body
        if body is not None:
            body = dyn.RigidBodyDef(
                body.mass * scale,
                body.com,
                vscale(body.inertia, scale),
                body.estimated,
            )
        out.append(
            dyn.ChainNode(
                n.name, n.parent, n.offset, n.rest_rot, n.dof,
                n.hard_limits, body, n.source,
            )
        )
    return tuple(out)


def spawn_asset(
    oid: int,
    adef: AssetDef,
    pos: Vec3,
    yaw: float = 0.0,
    mass_scale: float = 1.0,
    expected_mass: float | None = None,
    expected_speed: float | None = None,
    velocity: Vec3 = (0.0, 0.0, 0.0),
    label: str = "",
) -> ObstacleInstance:
    actual_mass = adef.mass * mass_scale
    if adef.projectile is not None:
        return ObstacleInstance(
            oid=oid, adef=adef, cdef=None, state=None,
            pos=pos, vel=velocity,
            mass=actual_mass,
            expected_mass=expected_mass if expected_mass is not None else actual_mass,
            expected_speed=expected_speed,
            label=label or adef.kind,
        )
    cdef = dyn.build_chain(
        _scaled_links(adef.links, mass_scale),
        gravity_scale=1.0 if adef.hanging else 0.0,
    )
    base_rot = quat_from_euler_xyz(0.0, yaw, 0.0)
    state = dyn.rest_state(cdef, pos, base_rot)
    return ObstacleInstance(
        oid=oid, adef=adef, cdef=cdef, state=state,
        mass=actual_mass,
        expected_mass=expected_mass if expected_mass is not None else actual_mass,
        expected_speed=expected_speed,
        label=label or adef.kind,
    )


def step_obstacle(
    inst: ObstacleInstance, dt: float, load: dyn.ExternalLoad | None = None
) -> None:
    """Advance one substep in place; frozen instances are left untouched."""
    if inst.frozen:
        return
    if inst.adef.projectile is not None:
        acc = dyn.GRAVITY
        if load is not None:
            for _, _, force in load.forces:
                acc = vadd(acc, vscale(force, 1.0 / inst.mass))
        inst.vel = vadd(inst.vel, vscale(acc, dt))
        inst.pos = vadd(inst.pos, vscale(inst.vel, dt))
        return
    assert inst.cdef is not None and inst.state is not None
    # Chains that have come to rest suspend exactly like out-of-radius ones
    # and wake on the first contact load.
    if load is not None and (load.forces or load.torques):
        inst.asleep = False
        inst.quiet_s = 0.0
    elif inst.asleep:
        return
    cdef = inst.cdef
    kp = inst.adef.kp
    kd = inst.adef.kd if inst.adef.kd is not None else HANGING_DRAG
    # Published damping can exceed the explicit stability bound (kd*h/I < ~1)
    # for light links, so split the step until every axis is comfortably
    # inside it.
    inertias = dyn.effective_inertias(cdef, inst.state)
    i_min = math.inf
    for i, node in enumerate(cdef.nodes):
        for k in range(3):
            if node.dof[k]:
                i_min = min(i_min, inertias[i][k])
    subs = 1
    if kd > 0.0 and math.isfinite(i_min):
        subs = max(1, math.ceil(kd * dt / (0.4 * i_min)))
    h = dt / subs
    state = inst.state
    for _ in range(subs):
        angles = dyn.joint_angles(cdef, state)
        torques = []
        for i in range(len(cdef.nodes)):
            rates = state.vel[i]
            if kp is None:
                torques.append(vscale(rates, -kd))
            else:
                torques.append(
                    tuple(
                        dyn.pd_torque(kp, kd, 0.0, angles[i][k], rates[k])
                        for k in range(3)
                    )
                )
        state = dyn.step_chain(cdef, state, h, torques=torques, load=load)
    inst.state = state
    max_rate = 0.0
    for i, node in enumerate(cdef.nodes):
        for k in range(3):
            if node.dof[k]:
                max_rate = max(max_rate, abs(state.vel[i][k]))
    if max_rate < SLEEP_RATE_EPS:
        inst.quiet_s += dt
        if inst.quiet_s >= SLEEP_HOLD:
            inst.asleep = True
    else:
        inst.quiet_s = 0.0


def link_shapes(inst: ObstacleInstance) -> list[tuple[int, Shape]]:
    """World-space collision proxies of one obstacle."""
    if inst.adef.projectile is not None:
        return [(0, Sphere(inst.pos, inst.adef.projectile.radius))]
    assert inst.cdef is not None and inst.state is not None
    pos, rot, _ = dyn.chain_transforms(inst.cdef, inst.state)
    out: list[tuple[int, Shape]] = []
    for link, shape in inst.adef.colliders:
        p, r = pos[link], rot[link]
        if isinstance(shape, Sphere):
            out.append((link, Sphere(vadd(p, quat_rotate(r, shape.center)),
                                     shape.radius)))
        elif isinstance(shape, Capsule):
            out.append((link, Capsule(
                vadd(p, quat_rotate(r, shape.a)),
                vadd(p, quat_rotate(r, shape.b)),
                shape.radius,
            )))
        else:
            out.append((link, Box(
                vadd(p, quat_rotate(r, shape.center)),
                shape.half_extents,
                quat_mul(r, shape.rotation),
            )))
    return out


def obstacle_point_velocity(
    inst: ObstacleInstance, link: int, point: Vec3
) -> Vec3:
    if inst.frozen:
        return (0.0, 0.0, 0.0)
    if inst.adef.projectile is not None:
        return inst.vel
    assert inst.cdef is not None and inst.state is not None
    tf = dyn.chain_transforms(inst.cdef, inst.state)
    return dyn.point_velocity(inst.cdef, inst.state, tf, link, point)


def detect_contacts(
    character: Sequence[tuple[int, Capsule]],
    obstacles: Sequence[ObstacleInstance],
) -> list[Contact]:
    """All penetrating character-limb / obstacle-link pairs, sorted by ids."""
    if not character:
        return []
    contacts: list[Contact] = []
    for inst in obstacles:
        base = inst.base_position()
        near = False
        for _, cap in character:
            mid = vscale(vadd(cap.a, cap.b), 0.5)
            if vnorm(vsub(mid, base)) < inst.adef.bound + vnorm(
                vsub(cap.b, cap.a)
            ) + cap.radius:
                near = True
                break
        if not near:
            continue
        for link, shape in link_shapes(inst):
            for joint, cap in character:
                hit = _capsule_vs_shape(cap, shape)
                if hit is None:
                    continue
                depth, normal, point = hit
                contacts.append(
                    Contact(point, normal, depth, joint, (inst.oid, link))
                )
    contacts.sort(key=lambda c: (c.body_a, c.body_b))
    return contacts


def update_freeze(
    obstacles: Sequence[ObstacleInstance],
    char_pos: Vec3,
    radius: float = ACTIVITY_RADIUS,
) -> None:
    """Suspend obstacles outside the activity radius; resume inside it.

    Freezing is pure state suspension: nothing is written to the obstacle
    state, so resuming continues exactly where the asset stopped.
    """
    for inst in obstacles:
        inst.frozen = vnorm(vsub(inst.base_position(), char_pos)) > radius
