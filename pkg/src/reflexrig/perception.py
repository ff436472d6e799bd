"""Sight, safety regions, gesture planning, and the contact state machine.

The character sees obstacles through a head-mounted cone of fixed half-angle
and range, with a single ray-cast occlusion check against the other
obstacles' collision proxies. Each shoulder carries a spherical safety
region; an obstacle is *active* for a region when its closest point is
visible and strictly inside the region. Obstacles on a predicted course into
a region engage the planner early, so the reaction-time law has a positive
distance to work with before impact.

Interactions run a small per-hand state machine:

    idle -> anticipating -> contact (sliding or fixed) -> releasing -> idle

with a repositioning detour when a fixed grip drifts out of reach. The
planner works on *expected* obstacle metadata, which scenarios may spoof;
reacting wrongly to a lied-about mass is intended behavior, not a bug.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import control
from . import dynamics as dyn
from . import world
from .ik import IkGoal
from .math3d import (
    IDENTITY,
    Quat,
    Vec3,
    ease,
    hermite,
    quat_conj,
    quat_from_matrix,
    quat_rotate,
    slerp,
    vadd,
    vcross,
    vdist,
    vdot,
    vlerp,
    vnorm,
    vnormalize,
    vscale,
    vsub,
)
from .skeleton import Rig

DEFAULT_HALF_ANGLE = math.radians(50.0)
DEFAULT_RANGE = 3.0
DEFAULT_REGION_RADIUS = 0.5
EPS_HAND = 0.2  # m: hand-distance tie window for two-handed engagement
MASS_BOTH = 8.0  # kg: expected mass above which both hands commit
ALPHA_TR = 0.8
TR_BOUNDS = (0.5, 2.0)
SPEED_EPS = 1e-6
PREDICT_MIN_SPEED = 0.25  # m/s closing speed below which arrival prediction is skipped
PREDICT_LEAD_MAX = 1.0  # s: linear course extrapolation is only trusted this far
HAND_SPREAD = 0.12  # m: per-hand offset for two-handed contact
REACH_FRACTION = 0.98  # of arm length before a fixed grip repositions
RECOVERY_RATE = 0.05  # rad/s
RECOVERY_HOLD = 0.5  # s below the rate before a collision anchor retires
COLLISION_FORCE_MIN = 5.0  # N of normal force before a fallback anchor fires

IDLE = "idle"
ANTICIPATING = "anticipating"
SLIDING = "contact_sliding"
FIXED = "contact_fixed"
REPOSITIONING = "repositioning"
RELEASING = "releasing"
PHASES = (IDLE, ANTICIPATING, SLIDING, FIXED, REPOSITIONING, RELEASING)

_UP: Vec3 = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class SightFrustum:
    apex: Vec3
    direction: Vec3  # unit facing vector
    half_angle: float = DEFAULT_HALF_ANGLE
    range: float = DEFAULT_RANGE

    def __post_init__(self):
        if not 0.0 < self.half_angle < math.pi / 2.0:
            raise ValueError("half_angle must lie in (0, pi/2)")
        if self.range <= 0.0:
            raise ValueError("range must be positive")


@dataclass(frozen=True)
class SafetyRegion:
    attach_joint: str
    radius: float = DEFAULT_REGION_RADIUS
    region_id: str = ""

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class ObstacleMeta:
    """What the character knows about one obstacle this frame.

    Expected values come from the instance metadata and may legitimately
    differ from the actual ones.
    """

    expected_mass: float
    expected_speed: float
    actual_mass: float
    actual_speed: float
    closest_point: Vec3
    normal: Vec3
    distance: float


@dataclass(frozen=True)
class SightHit:
    oid: int
    link: int
    meta: ObstacleMeta
    velocity: Vec3  # actual world velocity of the closest point
    link_pos: Vec3
    link_rot: Quat


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

def in_cone(frustum: SightFrustum, p: Vec3) -> bool:
    w = vsub(p, frustum.apex)
    dist = vnorm(w)
    if dist > frustum.range:
        return False
    if dist < 1e-9:
        return True
    cos_angle = vdot(w, frustum.direction) / dist
    return cos_angle >= math.cos(frustum.half_angle)


def segment_hits_shape(a: Vec3, b: Vec3, shape: world.Shape) -> bool:
    if isinstance(shape, world.Sphere):
        on_seg, _ = world.segment_point(a, b, shape.center)
        return vnorm(vsub(on_seg, shape.center)) < shape.radius
    if isinstance(shape, world.Capsule):
        p, q = world.segment_segment(a, b, shape.a, shape.b)
        return vnorm(vsub(p, q)) < shape.radius
    # Box: signed distance is convex along the segment.
    lo, hi = 0.0, 1.0
    ab = vsub(b, a)

    def sd(t: float) -> float:
        return world.closest_point(shape, vadd(a, vscale(ab, t))).distance

    for _ in range(40):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if sd(m1) <= sd(m2):
            hi = m2
        else:
            lo = m1
    return sd(0.5 * (lo + hi)) < 0.0


def occluded(
    frustum: SightFrustum,
    point: Vec3,
    obstacles: Sequence[world.ObstacleInstance],
    ignore_oid: int,
) -> bool:
    """One ray-cast from the head to ``point`` against the other proxies."""
    # Pull the far end slightly back so touching the target's own surface
    # neighborhood does not count as blockage.
    ray_end = vadd(point, vscale(vsub(frustum.apex, point), 0.02))
    for inst in obstacles:
        if inst.oid == ignore_oid:
            continue
        for _, shape in world.link_shapes(inst):
            if segment_hits_shape(frustum.apex, ray_end, shape):
                return True
    return False


def observe(
    inst: world.ObstacleInstance,
    region_center: Vec3,
    char_velocity: Vec3 = (0.0, 0.0, 0.0),
) -> SightHit:
    """Closest-point metadata of one obstacle relative to a region center."""
    best: world.ClosestPoint | None = None
    best_link = 0
    for link, shape in world.link_shapes(inst):
        cp = world.closest_point(shape, region_center)
        if best is None or cp.distance < best.distance:
            best = cp
            best_link = link
    if best is None:
        raise ValueError(f"obstacle {inst.oid} has no collision proxies")
    vel = world.obstacle_point_velocity(inst, best_link, best.point)
    rel = vsub(vel, char_velocity)
    speed = vnorm(rel)
    if inst.adef.projectile is not None:
        link_pos, link_rot = inst.pos, IDENTITY
    else:
        assert inst.cdef is not None and inst.state is not None
        pos, rot, _ = dyn.chain_transforms(inst.cdef, inst.state)
        link_pos, link_rot = pos[best_link], rot[best_link]
    return SightHit(
        oid=inst.oid,
        link=best_link,
        meta=ObstacleMeta(
            expected_mass=inst.expected_mass,
            expected_speed=(
                inst.expected_speed if inst.expected_speed is not None else speed
            ),
            actual_mass=inst.mass,
            actual_speed=speed,
            closest_point=best.point,
            normal=best.normal,
            distance=best.distance,
        ),
        velocity=rel,
        link_pos=link_pos,
        link_rot=link_rot,
    )


def detect_active(
    frustum: SightFrustum,
    regions: Sequence[tuple[SafetyRegion, Vec3]],
    obstacles: Sequence[world.ObstacleInstance],
    char_velocity: Vec3 = (0.0, 0.0, 0.0),
) -> dict[str, list[SightHit]]:
    """Per-region lists of intersecting visible obstacles, nearest first."""
    out: dict[str, list[SightHit]] = {}
    for region, center in regions:
        hits = []
        for inst in obstacles:
            if (
                vdist(inst.base_position(), center)
                > inst.adef.bound + region.radius + 0.1
            ):
                continue
            hit = observe(inst, center, char_velocity)
            if hit.meta.distance >= region.radius:
                continue
            if not in_cone(frustum, hit.meta.closest_point):
                continue
            if occluded(frustum, hit.meta.closest_point, obstacles, inst.oid):
                continue
            hits.append(hit)
        hits.sort(key=lambda h: (h.meta.distance, h.oid))
        out[region.region_id] = hits
    return out


def predict_incoming(
    frustum: SightFrustum,
    region: SafetyRegion,
    center: Vec3,
    obstacles: Sequence[world.ObstacleInstance],
    char_velocity: Vec3 = (0.0, 0.0, 0.0),
    horizon: float = TR_BOUNDS[1],
) -> list[SightHit]:
    """Visible obstacles on a course into the region, soonest first.

    Direction comes from the observed velocity; the (possibly spoofed)
    expected speed only rescales time-to-arrival.
    """
    hits: list[tuple[float, SightHit]] = []
    for inst in obstacles:
        if (
            vdist(inst.base_position(), frustum.apex)
            > frustum.range + inst.adef.bound + 0.1
        ):
            continue
        hit = observe(inst, center, char_velocity)
        meta = hit.meta
        if meta.distance < region.radius:
            continue  # already inside; detect_active owns it
        speed = vnorm(hit.velocity)
        if speed < SPEED_EPS or meta.expected_speed < SPEED_EPS:
            continue
        direction = vscale(hit.velocity, 1.0 / speed)
        to_center = vsub(center, meta.closest_point)
        approach = vdot(to_center, direction)
        if approach <= 0.0:
            continue  # moving away
        miss_sq = vdot(to_center, to_center) - approach * approach
        if miss_sq >= region.radius * region.radius:
            continue
        t_arrive = approach / meta.expected_speed
        if t_arrive > horizon:
            continue
        if not in_cone(frustum, meta.closest_point):
            continue
        if occluded(frustum, meta.closest_point, obstacles, inst.oid):
            continue
        hits.append((t_arrive, hit))
    hits.sort(key=lambda pair: (pair[0], pair[1].oid))
    return [h for _, h in hits]


# ---------------------------------------------------------------------------
# targeting rules
# ---------------------------------------------------------------------------

def predicted_entry(
    closest_point: Vec3,
    normal: Vec3,
    rel_velocity: Vec3,
    obs_velocity: Vec3,
    center: Vec3,
    radius: float,
) -> tuple[Vec3, Vec3]:
    """Where the obstacle surface will sit when its course crosses the region.

    Plans made against a target still outside the region must aim at the
    arrival location, not at where the object is now: by the time the eased
    gesture completes, a thrown object has long left its engage-time position.
    The closest point is advanced by the obstacle's own motion over the lead
    time to the region sphere; static surroundings therefore keep their
    current point exactly. Returns (point, normal); the normal faces the
    region center at arrival so the palm meets the incoming course.

    Slow encounters skip the prediction: a linear course is a poor model of
    a drifting or swinging obstacle over the long lead times a low closing
    speed implies, and the contact phase tracks the live surface anyway.
    """
    speed = vnorm(rel_velocity)
    if speed < PREDICT_MIN_SPEED:
        return closest_point, normal
    q = vsub(closest_point, center)
    c2 = vdot(q, q) - radius * radius
    if c2 <= 0.0:
        return closest_point, normal  # already inside the region
    d = vscale(rel_velocity, 1.0 / speed)
    b = vdot(d, q)
    disc = b * b - c2
    if disc <= 0.0 or b >= 0.0:
        return closest_point, normal  # course misses or points away
    t_lead = min((-b - math.sqrt(disc)) / speed, PREDICT_LEAD_MAX)
    p_c = vadd(closest_point, vscale(obs_velocity, t_lead))
    char_velocity = vsub(obs_velocity, rel_velocity)
    center_f = vadd(center, vscale(char_velocity, t_lead))
    n_c = vsub(center_f, p_c)
    nn = vnorm(n_c)
    if nn < 1e-9:
        return p_c, normal
    return p_c, vscale(n_c, 1.0 / nn)


def reaction_time(
    d_i: float,
    r: float,
    speed: float,
    alpha: float = ALPHA_TR,
    bounds: tuple[float, float] = TR_BOUNDS,
) -> float:
    lo, hi = bounds
    if speed < SPEED_EPS:
        return hi
    return min(max(alpha * (d_i - r) / speed, lo), hi)


def assign_hands(
    meta: ObstacleMeta,
    d_left: float,
    d_right: float,
    eps_hand: float = EPS_HAND,
    m_both: float = MASS_BOTH,
) -> str:
    if meta.expected_mass > m_both or abs(d_left - d_right) < eps_hand:
        return "both"
    return "left" if d_left < d_right else "right"


def adapt_gains_for_target(
    meta: ObstacleMeta,
    k_l_min: float = control.K_L_MIN,
    k_l_max: float = control.K_L_MAX,
    m_max: float = control.MASS_FOR_MAX_GAIN,
) -> float:
    """Arm base stiffness from the *expected* (possibly spoofed) mass."""
    return control.stiffness_from_mass(meta.expected_mass, m_max, k_l_min, k_l_max)


def both_hand_points(
    p_c: Vec3, n_c: Vec3, left_shoulder: Vec3, right_shoulder: Vec3,
    spread: float = HAND_SPREAD,
) -> tuple[Vec3, Vec3]:
    """Two-handed contact points offset along the obstacle tangent."""
    tangent = vcross(_UP, n_c)
    if vnorm(tangent) < 1e-6:
        tangent = (1.0, 0.0, 0.0)
    else:
        tangent = vnormalize(tangent)
    if vdot(tangent, vsub(left_shoulder, right_shoulder)) < 0.0:
        tangent = vscale(tangent, -1.0)
    return vadd(p_c, vscale(tangent, spread)), vadd(p_c, vscale(tangent, -spread))


# ---------------------------------------------------------------------------
# gesture plans
# ---------------------------------------------------------------------------

def target_orientation(
    q0: Quat, basis: tuple[Vec3, Vec3], n_c: Vec3, continuity: bool = False
) -> tuple[Quat, bool]:
    """Hand world rotation mapping the local palm axis ``b_x`` onto ``n_c``.

    The remaining freedom keeps the current hand ``b_y`` as close as the
    frame allows. Returns (rotation, degenerate_flag); the flag is set when
    ``b_y`` is parallel to the normal and the secondary axis had to step in.

    With ``continuity`` the tangent axis is carried over from ``q0``'s own
    third axis, projected onto the new contact plane. Per-frame tracking
    against a prior goal must use this: rebuilding the frame from ``b_y``
    when ``q0`` is itself a solved frame negates the tangent every call
    (cross(cross(z, n), n) == -z) and flips the goal by pi each frame.
    """
    b_x, b_y = vnormalize(basis[0]), vnormalize(basis[1])
    b_z = vcross(b_x, b_y)
    z_t = (0.0, 0.0, 0.0)
    flagged = False
    if continuity:
        w_z = quat_rotate(q0, b_z)
        z_t = vsub(w_z, vscale(n_c, vdot(w_z, n_c)))
    if vnorm(z_t) < 1e-6:
        w_y = quat_rotate(q0, b_y)
        z_t = vcross(w_y, n_c)
    if vnorm(z_t) < 1e-6:
        flagged = True
        w_z = quat_rotate(q0, b_z)
        z_t = vcross(w_z, n_c)
        if vnorm(z_t) < 1e-6:  # both axes parallel: any perpendicular works
            z_t = vcross(_UP, n_c)
            if vnorm(z_t) < 1e-6:
                z_t = (1.0, 0.0, 0.0)
    z_t = vnormalize(z_t)
    y_t = vcross(z_t, n_c)
    rows = tuple(
        (
            n_c[i] * b_x[0] + y_t[i] * b_y[0] + z_t[i] * b_z[0],
            n_c[i] * b_x[1] + y_t[i] * b_y[1] + z_t[i] * b_z[1],
            n_c[i] * b_x[2] + y_t[i] * b_y[2] + z_t[i] * b_z[2],
        )
        for i in range(3)
    )
    return quat_from_matrix(rows), flagged


@dataclass
class AnticipationPlan:
    p0: Vec3
    q0: Quat
    p_c: Vec3
    q_c: Quat
    t0: float
    t_r: float
    easing: str = "smoothstep"
    flagged: bool = False

    def sample(self, t: float) -> tuple[Vec3, Quat, float]:
        s = min(max((t - self.t0) / self.t_r, 0.0), 1.0)
        w = ease(s, self.easing)
        return vlerp(self.p0, self.p_c, w), slerp(self.q0, self.q_c, w), s


def plan_anticipation(
    p0: Vec3,
    q0: Quat,
    p_c: Vec3,
    n_c: Vec3,
    basis: tuple[Vec3, Vec3],
    t0: float,
    t_r: float,
    easing: str = "smoothstep",
) -> AnticipationPlan:
    if t_r <= 0.0:
        raise ValueError("t_r must be positive")
    q_c, flagged = target_orientation(q0, basis, n_c)
    return AnticipationPlan(p0, q0, p_c, q_c, t0, t_r, easing, flagged)


def update_sliding(
    meta: ObstacleMeta,
    q_hand: Quat,
    basis: tuple[Vec3, Vec3],
    standoff: float = 0.0,
) -> tuple[Vec3, Quat]:
    """Contact goal tracking the live closest point, no time interpolation."""
    q_c, _ = target_orientation(q_hand, basis, meta.normal, continuity=True)
    return vadd(meta.closest_point, vscale(meta.normal, standoff)), q_c


@dataclass
class HermitePlan:
    p1: Vec3
    m1: Vec3
    p2: Vec3
    m2: Vec3
    q1: Quat
    q2: Quat
    t0: float
    t_r: float
    easing: str = "smoothstep"

    def sample(self, t: float) -> tuple[Vec3, Quat, float]:
        s = min(max((t - self.t0) / self.t_r, 0.0), 1.0)
        w = ease(s, self.easing)
        return (
            hermite(self.p1, self.m1, self.p2, self.m2, w),
            slerp(self.q1, self.q2, w),
            s,
        )


def plan_reposition(
    p1: Vec3,
    n1: Vec3,
    p2: Vec3,
    n2: Vec3,
    alpha: float,
    q1: Quat,
    q2: Quat,
    t0: float,
    t_r: float,
    easing: str = "smoothstep",
) -> HermitePlan:
    return HermitePlan(
        p1, vscale(n1, alpha), p2, vscale(n2, alpha), q1, q2, t0, t_r, easing
    )


@dataclass
class ReleasePlan:
    p_from: Vec3
    q_from: Quat
    t0: float
    t_r: float
    easing: str = "smoothstep"

    def sample(
        self, t: float, clip_pos: Vec3, clip_rot: Quat
    ) -> tuple[Vec3, Quat, float]:
        """Blend toward the live clip pose; lands on it even while it moves."""
        s = min(max((t - self.t0) / self.t_r, 0.0), 1.0)
        w = ease(s, self.easing)
        return vlerp(self.p_from, clip_pos, w), slerp(self.q_from, clip_rot, w), s


# ---------------------------------------------------------------------------
# unexpected-collision fallback decisions
# ---------------------------------------------------------------------------

def collision_anchor(
    rig: Rig, joint: int, anchors: Sequence[int]
) -> int | None:
    """Nearest admissible anchor for an unanticipated hit on ``joint``.

    Returns None when the joint is already below an active anchor (the limb
    is dynamic, the controller absorbs the hit) or when no admissible
    ancestor exists.
    """
    for a in anchors:
        if joint in rig.subtree(a):
            return None
    j = joint
    while j >= 0:
        if rig.joints[j].admissible_anchor:
            return j
        j = rig.joints[j].parent
    return None


def merge_anchor(rig: Rig, anchors: Sequence[int], new: int) -> tuple[int, ...]:
    """Add an anchor, dropping existing anchors it subsumes."""
    kept = [a for a in anchors if a not in rig.subtree(new)]
    return tuple(sorted(set(kept) | {new}))


@dataclass
class RecoveryMonitor:
    """Declares a collision response finished after sustained calm."""

    rate_threshold: float = RECOVERY_RATE
    hold: float = RECOVERY_HOLD
    quiet: float = 0.0

    def update(self, max_rate: float, dt: float) -> bool:
        if max_rate < self.rate_threshold:
            self.quiet += dt
        else:
            self.quiet = 0.0
        return self.quiet >= self.hold


# ---------------------------------------------------------------------------
# per-hand state machine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BehaviorParams:
    half_angle: float = DEFAULT_HALF_ANGLE
    sight_range: float = DEFAULT_RANGE
    region_radius: float = DEFAULT_REGION_RADIUS
    eps_hand: float = EPS_HAND
    m_both: float = MASS_BOTH
    alpha_tr: float = ALPHA_TR
    tr_bounds: tuple[float, float] = TR_BOUNDS
    easing: str = "smoothstep"
    contact_mode: str = "sliding"  # or "fixed"
    hand_spread: float = HAND_SPREAD
    standoff: float = 0.04
    reach_fraction: float = REACH_FRACTION
    horizon: float = TR_BOUNDS[1]
    reposition_alpha: float = 1.0
    collision_force_min: float = COLLISION_FORCE_MIN
    gain_bounds: tuple[float, float] = (control.K_L_MIN, control.K_L_MAX)
    hand_basis: tuple[Vec3, Vec3] = ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0))

    @staticmethod
    def from_dict(d: dict) -> "BehaviorParams":
        base = BehaviorParams()
        kw = {}
        for name in (
            "half_angle", "sight_range", "region_radius", "eps_hand",
            "m_both", "alpha_tr", "easing", "contact_mode", "hand_spread",
            "standoff", "reach_fraction", "horizon", "reposition_alpha",
            "collision_force_min",
        ):
            if name in d:
                kw[name] = d[name]
        if "tr_bounds" in d:
            kw["tr_bounds"] = tuple(d["tr_bounds"])
        if "gain_bounds" in d:
            kw["gain_bounds"] = tuple(d["gain_bounds"])
        if kw.get("contact_mode", base.contact_mode) not in ("sliding", "fixed"):
            raise ValueError("contact_mode must be 'sliding' or 'fixed'")
        if kw.get("easing", base.easing) not in (
            "linear", "smoothstep", "smootherstep"
        ):
            raise ValueError("unknown easing")
        return BehaviorParams(**kw)


@dataclass
class HandSnapshot:
    """Everything one hand's state machine reads this frame."""

    hand_pos: Vec3
    hand_rot: Quat
    clip_pos: Vec3
    clip_rot: Quat
    shoulder_pos: Vec3
    arm_length: float


@dataclass
class HandOutput:
    goal: IkGoal | None
    phase: str
    target_oid: int | None
    t_r: float | None
    k_l: float | None


@dataclass
class _HandState:
    hand: str
    phase: str = IDLE
    plan: AnticipationPlan | HermitePlan | ReleasePlan | None = None
    target_oid: int | None = None
    target_link: int = 0
    point_offset: Vec3 = (0.0, 0.0, 0.0)  # two-handed tangent offset
    fixed_local: Vec3 | None = None
    fixed_normal_local: Vec3 | None = None
    t_r: float | None = None
    k_l: float | None = None
    last_goal: tuple[Vec3, Quat] | None = None


class GestureController:
    """Drives both hands' gesture phases from per-frame sight data."""

    def __init__(self, params: BehaviorParams | None = None):
        self.params = params or BehaviorParams()
        self.hands = {"left": _HandState("left"), "right": _HandState("right")}
        self._char_velocity: Vec3 = (0.0, 0.0, 0.0)

    def phase(self, hand: str) -> str:
        return self.hands[hand].phase

    # -- engagement ---------------------------------------------------------

    def _pick_targets(
        self,
        active: dict[str, list[SightHit]],
        incoming: dict[str, list[SightHit]],
        snaps: dict[str, HandSnapshot],
    ) -> dict[str, tuple[SightHit, Vec3] | None]:
        """Per-hand (hit, tangent offset) after the both-hands rule."""
        p = self.params
        candidates: dict[str, SightHit | None] = {}
        for hand in ("left", "right"):
            hits = active.get(hand) or incoming.get(hand) or []
            candidates[hand] = hits[0] if hits else None
        left, right = candidates["left"], candidates["right"]
        out: dict[str, tuple[SightHit, Vec3] | None] = {
            "left": None, "right": None,
        }
        both_hit: SightHit | None = None
        if left is not None and right is not None and left.oid == right.oid:
            d_l = vdist(left.meta.closest_point, snaps["left"].hand_pos)
            d_r = vdist(right.meta.closest_point, snaps["right"].hand_pos)
            if assign_hands(left.meta, d_l, d_r, p.eps_hand, p.m_both) == "both":
                both_hit = left if left.meta.distance <= right.meta.distance else right
        elif left is not None and left.meta.expected_mass > p.m_both:
            both_hit = left
        elif right is not None and right.meta.expected_mass > p.m_both:
            both_hit = right
        if both_hit is not None:
            p_l, p_r = both_hand_points(
                both_hit.meta.closest_point,
                both_hit.meta.normal,
                snaps["left"].shoulder_pos,
                snaps["right"].shoulder_pos,
                p.hand_spread,
            )
            out["left"] = (both_hit, vsub(p_l, both_hit.meta.closest_point))
            out["right"] = (both_hit, vsub(p_r, both_hit.meta.closest_point))
            return out
        for hand in ("left", "right"):
            c = candidates[hand]
            if c is not None:
                out[hand] = (c, (0.0, 0.0, 0.0))
        return out

    # -- per-frame update ---------------------------------------------------

    def update(
        self,
        t: float,
        active: dict[str, list[SightHit]],
        incoming: dict[str, list[SightHit]],
        snaps: dict[str, HandSnapshot],
        char_velocity: Vec3 = (0.0, 0.0, 0.0),
    ) -> dict[str, HandOutput]:
        self._char_velocity = char_velocity
        targets = self._pick_targets(active, incoming, snaps)
        hit_by_oid: dict[int, SightHit] = {}
        for hits in list(active.values()) + list(incoming.values()):
            for h in hits:
                hit_by_oid.setdefault(h.oid, h)
        out = {}
        for hand in ("left", "right"):
            out[hand] = self._update_hand(
                self.hands[hand], t, targets[hand], hit_by_oid, snaps[hand]
            )
        return out

    def _engage(
        self,
        st: _HandState,
        t: float,
        hit: SightHit,
        offset: Vec3,
        p0: Vec3,
        q0: Quat,
        center: Vec3,
    ) -> None:
        p = self.params
        meta = hit.meta
        st.t_r = reaction_time(
            meta.distance, p.region_radius, meta.expected_speed,
            p.alpha_tr, p.tr_bounds,
        )
        point, normal = predicted_entry(
            meta.closest_point, meta.normal, hit.velocity,
            vadd(hit.velocity, self._char_velocity), center, p.region_radius,
        )
        surface = vadd(point, offset)
        goal_pos = vadd(surface, vscale(normal, p.standoff))
        st.plan = plan_anticipation(
            p0, q0, goal_pos, normal, p.hand_basis, t, st.t_r, p.easing
        )
        st.phase = ANTICIPATING
        st.target_oid = hit.oid
        st.target_link = hit.link
        st.point_offset = offset
        st.k_l = adapt_gains_for_target(
            meta, k_l_min=p.gain_bounds[0], k_l_max=p.gain_bounds[1]
        )

    def _release(self, st: _HandState, t: float) -> None:
        pos, rot = st.last_goal if st.last_goal is not None else (None, None)
        if pos is None:
            st.phase = IDLE
            st.plan = None
            st.target_oid = None
            return
        lo, _ = self.params.tr_bounds
        st.plan = ReleasePlan(pos, rot, t, st.t_r or lo, self.params.easing)
        st.phase = RELEASING
        st.target_oid = None
        st.k_l = None

    def _update_hand(
        self,
        st: _HandState,
        t: float,
        target: tuple[SightHit, Vec3] | None,
        hit_by_oid: dict[int, SightHit],
        snap: HandSnapshot,
    ) -> HandOutput:
        p = self.params
        basis = p.hand_basis

        if st.phase == IDLE:
            if target is not None:
                hit, offset = target
                self._engage(
                    st, t, hit, offset, snap.hand_pos, snap.hand_rot,
                    snap.shoulder_pos,
                )
            else:
                st.last_goal = None
                return HandOutput(None, IDLE, None, None, None)

        if st.phase == ANTICIPATING:
            assert isinstance(st.plan, AnticipationPlan)
            current = hit_by_oid.get(st.target_oid)
            if current is None:
                pos, rot, _ = st.plan.sample(t)
                st.last_goal = (pos, rot)
                self._release(st, t)
            else:
                pos, rot, s = st.plan.sample(t)
                st.last_goal = (pos, rot)
                if s >= 1.0:
                    if p.contact_mode == "fixed":
                        st.phase = FIXED
                        inv = quat_conj(current.link_rot)
                        st.fixed_local = quat_rotate(
                            inv, vsub(pos, current.link_pos)
                        )
                        st.fixed_normal_local = quat_rotate(
                            inv, current.meta.normal
                        )
                    else:
                        st.phase = SLIDING

        if st.phase == SLIDING:
            current = hit_by_oid.get(st.target_oid)
            if current is None:
                self._release(st, t)
            else:
                meta = current.meta
                surface = vadd(meta.closest_point, st.point_offset)
                # Seed the tangent frame from the previous goal, not the live
                # hand: a wobbling wrist would flip the frame every frame and
                # feed its own oscillation.
                seed = st.last_goal[1] if st.last_goal is not None else snap.hand_rot
                pos, rot = update_sliding(
                    ObstacleMeta(
                        meta.expected_mass, meta.expected_speed,
                        meta.actual_mass, meta.actual_speed,
                        surface, meta.normal, meta.distance,
                    ),
                    seed, basis, p.standoff,
                )
                st.last_goal = (pos, rot)

        if st.phase == FIXED:
            current = hit_by_oid.get(st.target_oid)
            if current is None:
                self._release(st, t)
            else:
                assert st.fixed_local is not None
                pos = vadd(
                    current.link_pos,
                    quat_rotate(current.link_rot, st.fixed_local),
                )
                normal = quat_rotate(current.link_rot, st.fixed_normal_local)
                seed = st.last_goal[1] if st.last_goal is not None else snap.hand_rot
                rot, _ = target_orientation(seed, basis, normal, continuity=True)
                st.last_goal = (pos, rot)
                if (
                    vdist(pos, snap.shoulder_pos)
                    > snap.arm_length * p.reach_fraction
                ):
                    meta = current.meta
                    p2 = vadd(
                        vadd(meta.closest_point, st.point_offset),
                        vscale(meta.normal, p.standoff),
                    )
                    q2, _ = target_orientation(rot, basis, meta.normal, continuity=True)
                    lo, _hi = p.tr_bounds
                    st.plan = plan_reposition(
                        pos, normal, p2, meta.normal, p.reposition_alpha,
                        rot, q2, t, st.t_r or lo, p.easing,
                    )
                    st.phase = REPOSITIONING

        if st.phase == REPOSITIONING:
            assert isinstance(st.plan, HermitePlan)
            current = hit_by_oid.get(st.target_oid)
            if current is None:
                pos, rot, _ = st.plan.sample(t)
                st.last_goal = (pos, rot)
                self._release(st, t)
            else:
                pos, rot, s = st.plan.sample(t)
                st.last_goal = (pos, rot)
                if s >= 1.0:
                    st.phase = FIXED
                    inv = quat_conj(current.link_rot)
                    st.fixed_local = quat_rotate(inv, vsub(pos, current.link_pos))
                    st.fixed_normal_local = quat_rotate(inv, current.meta.normal)

        if st.phase == RELEASING:
            assert isinstance(st.plan, ReleasePlan)
            pos, rot, s = st.plan.sample(t, snap.clip_pos, snap.clip_rot)
            st.last_goal = (pos, rot)
            if target is not None:
                # Retarget mid-release from the interpolated pose.
                hit, offset = target
                self._engage(st, t, hit, offset, pos, rot, snap.shoulder_pos)
                pos, rot, _ = st.plan.sample(t)  # type: ignore[union-attr]
                st.last_goal = (pos, rot)
            elif s >= 1.0:
                st.phase = IDLE
                st.plan = None
                st.last_goal = None
                return HandOutput(None, IDLE, None, None, None)

        assert st.last_goal is not None
        goal = IkGoal(
            hand=st.hand,
            target_pos=st.last_goal[0],
            target_rot=st.last_goal[1],
            active=True,
        )
        return HandOutput(goal, st.phase, st.target_oid, st.t_r, st.k_l)
