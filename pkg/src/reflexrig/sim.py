"""Scenario runs: per-frame pipeline, deterministic record/replay.

A tick walks the fixed stage order: clip sampling plus scripted or steered
root motion produce the input skeleton; the sight/gesture layer turns nearby
obstacles into hand goals, gain changes, and (for unanticipated impacts)
temporary anchors; IK edits the arms into the kinematic skeleton; the
antagonistic controllers fit gains against that target; two physics substeps
advance the anchored sub-chains and every obstacle under contact forces; and
the responsive skeleton is assembled from kinematic joints plus integrated
dynamic joints.

Everything a frame produced is serialized into one telemetry record,
including the steering input that was applied, so a recorded run can be
re-simulated from its own header and compared hash-for-hash.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable

import jsonschema

from . import control, dynamics as dyn, perception as pc, world
from . import telemetry
from .defaults import default_rig, stand_clip, walk_clip
from .ik import IkGoal, solve_arm
from .math3d import (
    IDENTITY,
    Quat,
    Vec3,
    euler_xyz,
    quat_conj,
    quat_from_axis_angle,
    quat_from_euler_xyz,
    quat_mul,
    quat_normalize,
    quat_rotate,
    vadd,
    vdot,
    vnorm,
    vscale,
    vsub,
)
from .skeleton import (
    AnimationClip,
    Pose,
    Rig,
    forward_kinematics,
    sample_clip,
    validate_anchors,
)

DT_DEFAULT = 1.0 / 120.0
PHYSICS_SUBSTEPS = 2
TURN_RATE = math.radians(120.0)  # rad/s root yaw limit
WAYPOINT_RADIUS = 0.05
STEER_SPEED_MAX = 3.0
_AXES: tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
_UP: Vec3 = (0.0, 1.0, 0.0)

HANDS = ("left", "right")
_ARM_JOINTS = {
    "left": ("shoulder_l", "upper_arm_l", "forearm_l", "hand_l"),
    "right": ("shoulder_r", "upper_arm_r", "forearm_r", "hand_r"),
}


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

SCENARIO_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "seed", "duration"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "dt": {"type": "number", "exclusiveMinimum": 0.0, "maximum": 1.0 / 30.0},
        "duration": {"type": "number", "exclusiveMinimum": 0.0},
        "character": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "position": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 3, "maxItems": 3,
                },
                "yaw": {"type": "number"},
                "clip": {"enum": ["stand", "walk"]},
                "anchors": {"type": "array", "items": {"type": "string"}},
                "behavior": {"type": "object"},
                "auto_gesture": {"type": "boolean"},
                "collision_response": {"type": "boolean"},
                "gain_schedule": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["t", "k_l"],
                        "additionalProperties": False,
                        "properties": {
                            "t": {"type": "number", "minimum": 0.0},
                            "k_l": {"type": "number", "exclusiveMinimum": 0.0},
                        },
                    },
                },
            },
        },
        "locomotion": {
            "type": "object",
            "required": ["mode"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["none", "external", "script"]},
                "waypoints": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["pos", "speed"],
                        "additionalProperties": False,
                        "properties": {
                            "pos": {
                                "type": "array", "items": {"type": "number"},
                                "minItems": 2, "maxItems": 2,
                            },
                            "speed": {"type": "number", "exclusiveMinimum": 0.0},
                        },
                    },
                },
            },
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "position"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"type": "string"},
                    "id": {"type": "integer", "minimum": 0},
                    "position": {
                        "type": "array", "items": {"type": "number"},
                        "minItems": 3, "maxItems": 3,
                    },
                    "yaw": {"type": "number"},
                    "mass_scale": {"type": "number", "exclusiveMinimum": 0.0},
                    "expected_mass": {"type": "number", "minimum": 0.0},
                    "expected_speed": {"type": "number", "minimum": 0.0},
                    "velocity": {
                        "type": "array", "items": {"type": "number"},
                        "minItems": 3, "maxItems": 3,
                    },
                    "label": {"type": "string"},
                },
            },
        },
    },
}

_CHARACTER_DEFAULTS = {
    "position": [0.0, 0.0, 0.0],
    "yaw": 0.0,
    "anchors": ["upper_arm_l", "upper_arm_r"],
    "behavior": {},
    "auto_gesture": True,
    "collision_response": True,
    "gain_schedule": [],
}


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    dt: float
    duration: float
    start_pos: tuple[float, float]
    start_yaw: float
    clip_name: str
    anchors: tuple[str, ...]
    behavior: pc.BehaviorParams
    auto_gesture: bool
    collision_response: bool
    gain_schedule: tuple[tuple[float, float], ...]
    locomotion_mode: str
    waypoints: tuple[tuple[float, float, float], ...]  # x, z, speed
    obstacles: tuple[dict, ...]
    raw: dict  # fully resolved config, reproduced in telemetry headers


def load_scenario(data: dict) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise ScenarioError(f"{e.json_path}: {e.message}")

    char = {**_CHARACTER_DEFAULTS, **data.get("character", {})}
    loco = data.get("locomotion", {"mode": "none"})
    mode = loco["mode"]
    if mode == "script" and not loco.get("waypoints"):
        raise ScenarioError("$.locomotion.waypoints: required for script mode")
    char.setdefault("clip", "walk" if mode != "none" else "stand")
    try:
        behavior = pc.BehaviorParams.from_dict(char["behavior"])
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"$.character.behavior: {e}") from e

    library = world.load_asset_library()
    obstacles = []
    for i, od in enumerate(data.get("obstacles", [])):
        if od["kind"] not in library:
            raise ScenarioError(
                f"$.obstacles[{i}].kind: unknown asset {od['kind']!r}"
            )
        entry = {
            "kind": od["kind"],
            "id": od.get("id", i),
            "position": [float(c) for c in od["position"]],
            "yaw": float(od.get("yaw", 0.0)),
            "mass_scale": float(od.get("mass_scale", 1.0)),
            "velocity": [float(c) for c in od.get("velocity", (0.0, 0.0, 0.0))],
            "label": od.get("label", od["kind"]),
        }
        if "expected_mass" in od:
            entry["expected_mass"] = float(od["expected_mass"])
        if "expected_speed" in od:
            entry["expected_speed"] = float(od["expected_speed"])
        obstacles.append(entry)
    ids = [o["id"] for o in obstacles]
    if len(set(ids)) != len(ids):
        raise ScenarioError("$.obstacles: duplicate obstacle ids")

    resolved = {
        "version": 1,
        "name": data.get("name", "unnamed"),
        "seed": data["seed"],
        "dt": float(data.get("dt", DT_DEFAULT)),
        "duration": float(data["duration"]),
        "character": char,
        "locomotion": loco,
        "obstacles": obstacles,
    }
    waypoints = tuple(
        (float(w["pos"][0]), float(w["pos"][1]), float(w["speed"]))
        for w in loco.get("waypoints", [])
    )
    return Scenario(
        name=resolved["name"],
        seed=resolved["seed"],
        dt=resolved["dt"],
        duration=resolved["duration"],
        start_pos=(char["position"][0], char["position"][2]),
        start_yaw=float(char["yaw"]),
        clip_name=char["clip"],
        anchors=tuple(char["anchors"]),
        behavior=behavior,
        auto_gesture=bool(char["auto_gesture"]),
        collision_response=bool(char["collision_response"]),
        gain_schedule=tuple(
            sorted((float(g["t"]), float(g["k_l"])) for g in char["gain_schedule"])
        ),
        locomotion_mode=mode,
        waypoints=waypoints,
        obstacles=tuple(obstacles),
        raw=resolved,
    )


def scenario_from_file(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}:{e.lineno}: {e.msg}") from e
    return load_scenario(data)


def packaged_scenarios() -> list[str]:
    base = resources.files("reflexrig").joinpath("data/scenarios")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_packaged_scenario(name: str) -> Scenario:
    ref = resources.files("reflexrig").joinpath(f"data/scenarios/{name}.json")
    if not ref.is_file():
        raise ScenarioError(
            f"unknown demo {name!r}; available: {', '.join(packaged_scenarios())}"
        )
    return load_scenario(json.loads(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# locomotion
# ---------------------------------------------------------------------------

def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Locomotion:
    """Root translation/yaw from a waypoint script or live steering.

    The root always moves along its own facing, with yaw slewing toward the
    desired heading at a fixed turn rate, so sharp script corners become
    arcs rather than teleports.
    """

    mode: str
    x: float
    z: float
    yaw: float
    waypoints: tuple[tuple[float, float, float], ...] = ()
    idx: int = 0
    velocity: Vec3 = (0.0, 0.0, 0.0)
    steer_dir: Vec3 = (0.0, 0.0, 1.0)
    steer_speed: float = 0.0

    def steer(self, direction: Vec3, speed: float) -> None:
        self.steer_dir = direction
        self.steer_speed = min(max(speed, 0.0), STEER_SPEED_MAX)

    def step(self, dt: float) -> None:
        speed = 0.0
        desired = self.yaw
        cap = math.inf
        if self.mode == "script":
            while self.idx < len(self.waypoints):
                tx, tz, sp = self.waypoints[self.idx]
                dx, dz = tx - self.x, tz - self.z
                dist = math.hypot(dx, dz)
                if dist > WAYPOINT_RADIUS:
                    desired = math.atan2(dx, dz)
                    speed = sp
                    cap = dist
                    break
                self.idx += 1
        elif self.mode == "external":
            dx, dz = self.steer_dir[0], self.steer_dir[2]
            if self.steer_speed > 1e-9 and math.hypot(dx, dz) > 1e-9:
                desired = math.atan2(dx, dz)
                speed = self.steer_speed
        if speed <= 0.0:
            self.velocity = (0.0, 0.0, 0.0)
            return
        turn = _wrap_angle(desired - self.yaw)
        limit = TURN_RATE * dt
        self.yaw += min(max(turn, -limit), limit)
        fx, fz = math.sin(self.yaw), math.cos(self.yaw)
        step_len = min(speed * dt, cap)
        self.x += fx * step_len
        self.z += fz * step_len
        self.velocity = (fx * speed, 0.0, fz * speed)


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

@dataclass
class TickInput:
    """External commands applied at one frame boundary."""

    steer: tuple[Vec3, float] | None = None
    override: dict | None = None


def validate_override(d: dict) -> dict:
    """Normalize a live-tuning request to known (lo, hi) pairs or raise."""
    kw: dict = {}
    for key in ("tr_bounds", "gain_bounds"):
        if key not in d:
            continue
        try:
            lo, hi = float(d[key][0]), float(d[key][1])
        except (TypeError, ValueError, IndexError, KeyError) as e:
            raise ScenarioError(f"bad {key}: {d[key]!r}") from e
        if not (0.0 < lo <= hi) or not math.isfinite(lo) or not math.isfinite(hi):
            raise ScenarioError(f"bad {key} [{lo}, {hi}]")
        kw[key] = (lo, hi)
    if not kw:
        raise ScenarioError("override carries no known fields")
    return kw


@dataclass
class _ChainRuntime:
    anchor: int
    cdef: dyn.ChainDef
    state: dyn.ChainState
    joints: list[int]  # rig joint per node
    prev_base: Vec3 | None = None
    targets: list[Quat] = field(default_factory=list)
    tau_ext: list[Vec3] = field(default_factory=list)
    inertias: list[Vec3] = field(default_factory=list)
    subs: int = 1  # integrator refinement per physics substep


@dataclass
class _TempAnchor:
    anchor: int
    targets: dict[int, Quat]  # frozen impact-time kinematic local rotations
    monitor: pc.RecoveryMonitor
    k_l_prior: dict[int, list[float | None]] = field(default_factory=dict)


def _zero_disabled(rot: Quat, node: dyn.ChainNode) -> Quat:
    """Project a local rotation onto the node's enabled axes.

    Matches how the integrator recomposes rotations, so a freshly built
    chain starts exactly where its first step would put it.
    """
    angles = list(euler_xyz(quat_mul(rot, quat_conj(node.rest_rot))))
    for k in range(3):
        if not node.dof[k]:
            angles[k] = 0.0
    return quat_normalize(
        quat_mul(quat_from_euler_xyz(*angles), node.rest_rot)
    )


class Engine:
    """Owns one character, its obstacle field, and the frame loop."""

    def __init__(self, scenario: Scenario, rig: Rig | None = None,
                 clip: AnimationClip | None = None):
        self.sc = scenario
        self.rig = rig if rig is not None else default_rig()
        if clip is not None:
            self.clip = clip
        elif scenario.clip_name == "walk":
            self.clip = walk_clip(self.rig)
        else:
            self.clip = stand_clip(self.rig)
        self.dt = scenario.dt
        self.params = scenario.behavior
        self.gesture = (
            pc.GestureController(self.params) if scenario.auto_gesture else None
        )
        self.base_anchors = validate_anchors(
            self.rig, [self.rig.index(n) for n in scenario.anchors]
        )
        self.temp_anchors: list[_TempAnchor] = []
        self.loco = Locomotion(
            scenario.locomotion_mode,
            scenario.start_pos[0], scenario.start_pos[1], scenario.start_yaw,
            scenario.waypoints,
        )
        library = world.load_asset_library()
        self.obstacles = [
            world.spawn_asset(
                od["id"], library[od["kind"]], tuple(od["position"]),
                yaw=od["yaw"], mass_scale=od["mass_scale"],
                expected_mass=od.get("expected_mass"),
                expected_speed=od.get("expected_speed"),
                velocity=tuple(od["velocity"]), label=od["label"],
            )
            for od in scenario.obstacles
        ]
        self._by_oid = {inst.oid: inst for inst in self.obstacles}

        self.frame = 0
        self.time = 0.0
        self._schedule_idx = 0
        self._neck = self.rig.index("neck_head")
        self._arm_idx = {
            h: tuple(self.rig.index(n) for n in _ARM_JOINTS[h]) for h in HANDS
        }
        self._arm_len = {
            h: vnorm(self.rig.joints[self._arm_idx[h][2]].tpose_pos)
            + vnorm(self.rig.joints[self._arm_idx[h][3]].tpose_pos)
            for h in HANDS
        }
        self.chains: dict[int, _ChainRuntime] = {}
        self._joint_chain: dict[int, tuple[int, int]] = {}
        self.controllers: dict[int, control.JointController] = {}
        self.responsive = self._input_pose()
        self._rebuild_chains(self.responsive)
        self.recent: deque[dict] = deque(maxlen=120)
        self.warnings: list[str] = []

    # -- partition maintenance ------------------------------------------------

    def active_anchors(self) -> tuple[int, ...]:
        anchors = self.base_anchors
        for ta in self.temp_anchors:
            anchors = pc.merge_anchor(self.rig, anchors, ta.anchor)
        return anchors

    def _rebuild_chains(self, pose: Pose) -> None:
        """Reconcile chains with the active anchor set, carrying joint state."""
        old: dict[int, tuple[Quat, Vec3]] = {}
        for cr in self.chains.values():
            for node, j in enumerate(cr.joints):
                old[j] = (cr.state.rot[node], cr.state.vel[node])
        chains: dict[int, _ChainRuntime] = {}
        for a in self.active_anchors():
            if a in self.chains:
                chains[a] = self.chains[a]
                continue
            cdef, joints = dyn.chain_from_subtree(self.rig, a)
            state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), IDENTITY)
            for node, j in enumerate(joints):
                if j in old:
                    state.rot[node], state.vel[node] = old[j]
                else:
                    state.rot[node] = _zero_disabled(
                        pose.rotations[j], cdef.nodes[node]
                    )
                    state.vel[node] = (0.0, 0.0, 0.0)
            chains[a] = _ChainRuntime(a, cdef, state, list(joints))
        self.chains = chains
        self._joint_chain = {
            j: (a, node)
            for a, cr in chains.items()
            for node, j in enumerate(cr.joints)
        }
        for j in list(self.controllers):
            if j not in self._joint_chain:
                del self.controllers[j]
        for j in self._joint_chain:
            if j not in self.controllers:
                self.controllers[j] = control.controller_for_joint(self.rig, j)

    # -- pipeline stages --------------------------------------------------------

    def _input_pose(self) -> Pose:
        pose = sample_clip(self.clip, self.time)
        root = pose.positions[0]
        pose.positions[0] = (self.loco.x, root[1], self.loco.z)
        pose.rotations[0] = quat_mul(
            quat_from_axis_angle(_UP, self.loco.yaw), pose.rotations[0]
        )
        return pose

    def _assemble(self, kin: Pose) -> Pose:
        out = kin.copy()
        for cr in self.chains.values():
            for node, j in enumerate(cr.joints):
                out.rotations[j] = cr.state.rot[node]
        return out

    def _char_capsules(self, pose: Pose) -> list[tuple[int, world.Capsule]]:
        pos, rot = forward_kinematics(self.rig, pose)
        out = []
        for i, joint in enumerate(self.rig.joints):
            c = joint.collider
            if c is None:
                continue
            out.append((i, world.Capsule(
                vadd(pos[i], quat_rotate(rot[i], c.a)),
                vadd(pos[i], quat_rotate(rot[i], c.b)),
                c.radius,
            )))
        return out

    def _perceive(self, input_fk, resp_fk) -> dict[str, pc.HandOutput]:
        pos_in, rot_in = input_fk
        pos_rs, rot_rs = resp_fk
        apex = vadd(pos_in[self._neck], (0.0, 0.12, 0.0))
        direction = quat_rotate(rot_in[self._neck], (0.0, 0.0, 1.0))
        frustum = pc.SightFrustum(
            apex, direction, self.params.half_angle, self.params.sight_range
        )
        regions = []
        centers = {}
        for hand in HANDS:
            shoulder = self._arm_idx[hand][1]
            centers[hand] = pos_in[shoulder]
            regions.append(
                (pc.SafetyRegion(
                    self.rig.joints[shoulder].name,
                    self.params.region_radius, hand,
                ), centers[hand])
            )
        vel = self.loco.velocity
        active = pc.detect_active(frustum, regions, self.obstacles, vel)
        incoming = {
            hand: pc.predict_incoming(
                frustum, region, center, self.obstacles, vel,
                self.params.horizon,
            )
            for (region, center), hand in zip(regions, HANDS)
        }
        snaps = {}
        for hand in HANDS:
            hand_j = self._arm_idx[hand][3]
            snaps[hand] = pc.HandSnapshot(
                hand_pos=pos_rs[hand_j], hand_rot=rot_rs[hand_j],
                clip_pos=pos_in[hand_j], clip_rot=rot_in[hand_j],
                shoulder_pos=centers[hand], arm_length=self._arm_len[hand],
            )
        return self.gesture.update(self.time, active, incoming, snaps, vel)

    def _gravity_estimate(self, kin: Pose, kin_fk, joint: int) -> Vec3:
        """Gravity torque at the target pose projected on the joint axes."""
        pos_w, rot_w = kin_fk
        origin = pos_w[joint]
        total = (0.0, 0.0, 0.0)
        for j in self.rig.subtree(joint):
            body = self.rig.joints[j].body
            if body is None:
                continue
            com = vadd(pos_w[j], quat_rotate(rot_w[j], body.com))
            f = vscale(dyn.GRAVITY, body.mass)
            total = vadd(total, (
                (com[1] - origin[1]) * f[2] - (com[2] - origin[2]) * f[1],
                (com[2] - origin[2]) * f[0] - (com[0] - origin[0]) * f[2],
                (com[0] - origin[0]) * f[1] - (com[1] - origin[1]) * f[0],
            ))
        parent = self.rig.joints[joint].parent
        parent_rot = rot_w[parent] if parent >= 0 else IDENTITY
        return (
            vdot(total, quat_rotate(parent_rot, _AXES[0])),
            vdot(total, quat_rotate(parent_rot, _AXES[1])),
            vdot(total, quat_rotate(parent_rot, _AXES[2])),
        )

    def _targets_for(self, cr: _ChainRuntime, kin: Pose) -> list[Quat]:
        frozen = None
        for ta in self.temp_anchors:
            if ta.anchor == cr.anchor:
                frozen = ta.targets
                break
        if frozen is None:
            return [kin.rotations[j] for j in cr.joints]
        return [frozen.get(j, kin.rotations[j]) for j in cr.joints]

    def _solve_chain_controls(
        self, cr: _ChainRuntime, kin: Pose, kin_fk
    ) -> dict[int, dict]:
        """Fit gains against this frame's targets; returns per-joint telemetry.

        Also freezes everything the inner integrator needs for the rest of
        the frame: targets, external-torque estimates, effective inertias,
        and the refinement count that keeps the explicit damper inside its
        stability bound on the lightest axis.
        """
        cr.inertias = dyn.effective_inertias(cr.cdef, cr.state)
        cr.targets = self._targets_for(cr, kin)
        cr.tau_ext = []
        h = self.dt / PHYSICS_SUBSTEPS
        subs = 1
        out: dict[int, dict] = {}
        for node, j in enumerate(cr.joints):
            ctrl = self.controllers[j]
            b = cr.state.rot[node]
            b_kin = cr.targets[node]
            tau_ext = self._gravity_estimate(kin, kin_fk, j)
            cr.tau_ext.append(tau_ext)
            res = control.compute_joint_torque(
                b, b_kin, ctrl, cr.state.vel[node], tau_ext, cr.inertias[node],
            )
            for k in range(3):
                k_total = res.k_l[k] + res.k_h[k]
                if k_total <= 0.0:
                    continue
                inertia = cr.inertias[node][k]
                k_d = 2.0 * control.DAMPING_RATIO * math.sqrt(k_total * inertia)
                subs = max(subs, math.ceil(h * k_d / (0.4 * inertia)))
            out[j] = {
                "theta": list(res.angles),
                "theta_kin": list(res.targets),
                "k_l": list(res.k_l),
                "k_h": list(res.k_h),
                "tau": list(res.torque),
            }
        cr.subs = subs
        return out

    def _integrate_chain(
        self, cr: _ChainRuntime, h: float, load: dyn.ExternalLoad | None
    ) -> None:
        """Advance one physics substep, re-evaluating the spring/damper at
        the refinement rate so damping torque never lags the velocity it
        opposes."""
        hs = h / cr.subs
        for _ in range(cr.subs):
            torques = []
            for node, j in enumerate(cr.joints):
                res = control.compute_joint_torque(
                    cr.state.rot[node], cr.targets[node], self.controllers[j],
                    cr.state.vel[node], cr.tau_ext[node], cr.inertias[node],
                )
                torques.append(res.torque)
            cr.state = dyn.step_chain(
                cr.cdef, cr.state, hs,
                torques=torques, load=load, axis_inertia=cr.inertias,
            )

    def _base_frame(self, cr: _ChainRuntime, kin: Pose, kin_fk) -> tuple[Vec3, Quat]:
        parent = self.rig.joints[cr.anchor].parent
        if parent < 0:
            # Root anchors fold the whole root motion into their own local
            # rotation, so the base frame reduces to the root position.
            return kin.positions[0], IDENTITY
        pos_w, rot_w = kin_fk
        return pos_w[parent], rot_w[parent]

    def _update_chain_bases(self, kin: Pose, kin_fk) -> None:
        for cr in self.chains.values():
            base_pos, base_rot = self._base_frame(cr, kin, kin_fk)
            prev = cr.prev_base if cr.prev_base is not None else base_pos
            cr.state.base_pos = base_pos
            cr.state.base_rot = base_rot
            cr.state.base_vel = vscale(vsub(base_pos, prev), 1.0 / self.dt)
            cr.prev_base = base_pos

    # -- collision fallback -------------------------------------------------

    def _maybe_trigger_anchors(
        self, contacts: list[world.Contact], kin: Pose, kin_fk, pose: Pose
    ) -> bool:
        triggered = False
        for c in contacts:
            j = c.body_a
            if j in self._joint_chain:
                continue  # already physics-driven: no-op
            inst = self._by_oid[c.body_b[0]]
            rel = vsub(
                self.loco.velocity,
                world.obstacle_point_velocity(inst, c.body_b[1], c.point),
            )
            f_char, _ = world.contact_response(c, rel)
            if vnorm(f_char) < self.params.collision_force_min:
                continue
            anchor = pc.collision_anchor(self.rig, j, self.active_anchors())
            if anchor is None:
                msg = (f"impact on {self.rig.joints[j].name!r} has no "
                       "admissible anchor; ignored")
                if msg not in self.warnings:
                    self.warnings.append(msg)
                continue
            self.temp_anchors.append(_TempAnchor(
                anchor=anchor,
                targets={
                    jj: kin.rotations[jj] for jj in self.rig.subtree(anchor)
                },
                monitor=pc.RecoveryMonitor(),
            ))
            triggered = True
        if triggered:
            self._rebuild_chains(pose)
            temp_by_anchor = {ta.anchor: ta for ta in self.temp_anchors}
            for cr in self.chains.values():
                if cr.prev_base is None:
                    base_pos, base_rot = self._base_frame(cr, kin, kin_fk)
                    cr.state.base_pos = base_pos
                    cr.state.base_rot = base_rot
                    cr.state.base_vel = (0.0, 0.0, 0.0)
                    cr.prev_base = base_pos
                if not cr.targets:
                    self._solve_chain_controls(cr, kin, kin_fk)
                    ta = temp_by_anchor.get(cr.anchor)
                    if ta is not None and self._install_holding_gains(cr, ta):
                        # gains changed: refit k_h/damping before integrating
                        self._solve_chain_controls(cr, kin, kin_fk)
        return triggered

    def _install_holding_gains(self, cr: _ChainRuntime, ta: _TempAnchor) -> bool:
        """Raise tension where the impact pose is otherwise unholdable.

        The collision controller promises an equilibrium at the impact-time
        angle; for axes loaded toward their upper limit that pins a minimum
        lower gain. Prior tensions are stashed for restore at recovery.
        """
        changed = False
        for node, j in enumerate(cr.joints):
            ctrl = self.controllers[j]
            ta.k_l_prior[j] = [
                ax.k_l if ax is not None else None for ax in ctrl.axes
            ]
            need = control.holding_lower_gain(
                ctrl, cr.targets[node], cr.tau_ext[node]
            )
            current = max(
                (ax.k_l for ax in ctrl.axes if ax is not None), default=0.0
            )
            if need > current:
                control.set_lower_gain(ctrl, need)
                changed = True
        return changed

    def _retire_recovered_anchors(self, pose: Pose) -> list[str]:
        ended = []
        for ta in list(self.temp_anchors):
            cr = self.chains.get(ta.anchor)
            if cr is None:  # subsumed by a later merge; drop silently
                self.temp_anchors.remove(ta)
                continue
            max_rate = 0.0
            for node in range(len(cr.joints)):
                for k in range(3):
                    if cr.cdef.nodes[node].dof[k]:
                        max_rate = max(max_rate, abs(cr.state.vel[node][k]))
            if ta.monitor.update(max_rate, self.dt):
                self.temp_anchors.remove(ta)
                for j, priors in ta.k_l_prior.items():
                    ctrl = self.controllers.get(j)
                    if ctrl is None:
                        continue
                    for k, v in enumerate(priors):
                        if v is not None and ctrl.axes[k] is not None:
                            ctrl.axes[k].k_l = v
                ended.append(self.rig.joints[ta.anchor].name)
        if ended:
            self._rebuild_chains(pose)
        return ended

    # -- overrides ------------------------------------------------------------

    def apply_override(self, d: dict) -> dict:
        """Replace live-tunable bounds; returns the resolved values."""
        kw = validate_override(d)
        self.params = replace(self.params, **kw)
        if self.gesture is not None:
            self.gesture.params = self.params
        return {k: list(v) for k, v in kw.items()}

    def _apply_gain_schedule(self) -> float | None:
        applied = None
        while (
            self._schedule_idx < len(self.sc.gain_schedule)
            and self.time >= self.sc.gain_schedule[self._schedule_idx][0]
        ):
            applied = self.sc.gain_schedule[self._schedule_idx][1]
            self._schedule_idx += 1
        if applied is not None:
            for hand in HANDS:
                for j in self._arm_idx[hand]:
                    if j in self.controllers:
                        control.set_lower_gain(self.controllers[j], applied)
        return applied

    # -- the tick ---------------------------------------------------------------

    def tick(self, tick_input: TickInput | None = None) -> dict:
        t0 = time.perf_counter_ns()
        record: dict = {"i": self.frame, "t": self.time}

        if tick_input is not None and tick_input.override is not None:
            record["override"] = self.apply_override(tick_input.override)
        if (
            tick_input is not None
            and tick_input.steer is not None
            and self.loco.mode == "external"
        ):
            direction, speed = tick_input.steer
            self.loco.steer(tuple(direction), float(speed))
        if self.loco.mode == "external":
            record["steer"] = {
                "dir": list(self.loco.steer_dir),
                "speed": self.loco.steer_speed,
            }
        scheduled = self._apply_gain_schedule()
        if scheduled is not None:
            record["gain_set"] = scheduled

        # 1. input skeleton
        self.loco.step(self.dt)
        input_pose = self._input_pose()
        input_fk = forward_kinematics(self.rig, input_pose)
        world.update_freeze(self.obstacles, input_pose.positions[0])

        # 2. sight, gestures, gain adaptation
        goals: list[IkGoal] = []
        gesture_rec = {}
        if self.gesture is not None:
            resp_fk = forward_kinematics(self.rig, self.responsive)
            outs = self._perceive(input_fk, resp_fk)
            for hand in HANDS:
                out = outs[hand]
                if out.goal is not None:
                    goals.append(out.goal)
                if out.k_l is not None:
                    for j in self._arm_idx[hand]:
                        if j in self.controllers:
                            control.set_lower_gain(self.controllers[j], out.k_l)
                gesture_rec[hand] = {
                    "phase": out.phase,
                    "target": out.target_oid,
                    "t_r": out.t_r,
                    "k_l": out.k_l,
                    "goal": list(out.goal.target_pos) if out.goal else None,
                }
        else:
            gesture_rec = {
                hand: {"phase": pc.IDLE, "target": None, "t_r": None,
                       "k_l": None, "goal": None}
                for hand in HANDS
            }

        # 3. kinematic skeleton
        kin_pose = input_pose.copy()
        for goal in goals:
            kin_pose = solve_arm(kin_pose, self.rig, goal)
        kin_fk = forward_kinematics(self.rig, kin_pose)

        # 4. controller fit at frame cadence
        self._update_chain_bases(kin_pose, kin_fk)
        joints_rec: dict[str, dict] = {}
        for cr in self.chains.values():
            per_joint = self._solve_chain_controls(cr, kin_pose, kin_fk)
            for j, data in per_joint.items():
                joints_rec[self.rig.joints[j].name] = data

        # 5. physics substeps with contacts
        h = self.dt / PHYSICS_SUBSTEPS
        contacts_rec: list[dict] = []
        for _ in range(PHYSICS_SUBSTEPS):
            pose_now = self._assemble(kin_pose)
            capsules = self._char_capsules(pose_now)
            contacts = world.detect_contacts(capsules, self.obstacles)
            if self.sc.collision_response and contacts:
                self._maybe_trigger_anchors(contacts, kin_pose, kin_fk, pose_now)
            char_loads: dict[int, dyn.ExternalLoad] = {}
            obs_loads: dict[int, dyn.ExternalLoad] = {}
            tf_cache: dict[int, tuple] = {}
            contacts_rec = []
            for c in contacts:
                inst = self._by_oid[c.body_b[0]]
                if c.body_a in self._joint_chain:
                    a, node = self._joint_chain[c.body_a]
                    cr = self.chains[a]
                    if a not in tf_cache:
                        tf_cache[a] = dyn.chain_transforms(cr.cdef, cr.state)
                    v_char = dyn.point_velocity(
                        cr.cdef, cr.state, tf_cache[a], node, c.point
                    )
                else:
                    v_char = self.loco.velocity
                v_obs = world.obstacle_point_velocity(inst, c.body_b[1], c.point)
                f_char, f_obs = world.contact_response(c, vsub(v_char, v_obs))
                if c.body_a in self._joint_chain:
                    a, node = self._joint_chain[c.body_a]
                    char_loads.setdefault(a, dyn.ExternalLoad()).forces.append(
                        (node, c.point, f_char)
                    )
                if not inst.frozen:
                    obs_loads.setdefault(inst.oid, dyn.ExternalLoad()).forces.append(
                        (c.body_b[1], c.point, f_obs)
                    )
                contacts_rec.append({
                    "joint": c.body_a,
                    "obstacle": list(c.body_b),
                    "point": list(c.point),
                    "normal": list(c.normal),
                    "depth": c.depth,
                    "force": vnorm(f_char),
                })
            for a, cr in self.chains.items():
                self._integrate_chain(cr, h, char_loads.get(a))
            for inst in self.obstacles:
                world.step_obstacle(inst, h, obs_loads.get(inst.oid))

        # 6. responsive skeleton
        self.time += self.dt
        self.frame += 1
        self.responsive = self._assemble(kin_pose)
        ended = self._retire_recovered_anchors(self.responsive)
        if ended:
            record["anchors_retired"] = ended
        resp_fk = forward_kinematics(self.rig, self.responsive)

        record.update({
            "input": _fk_dict(input_fk),
            "kin": _fk_dict(kin_fk),
            "resp": _fk_dict(resp_fk),
            "joints": joints_rec,
            "gesture": gesture_rec,
            "anchors": [self.rig.joints[a].name for a in self.active_anchors()],
            "temp_anchors": [
                self.rig.joints[ta.anchor].name for ta in self.temp_anchors
            ],
            "contacts": contacts_rec,
            "obstacles": [_obstacle_dict(inst) for inst in self.obstacles],
            "wall_ns": time.perf_counter_ns() - t0,
        })
        self.recent.append(record)
        return record

    # -- headers ------------------------------------------------------------

    def header(self) -> dict:
        joints = []
        for j in self.rig.joints:
            entry: dict = {"name": j.name, "parent": j.parent,
                           "pos": list(j.tpose_pos)}
            if j.collider is not None:
                entry["collider"] = {
                    "a": list(j.collider.a), "b": list(j.collider.b),
                    "radius": j.collider.radius,
                }
            joints.append(entry)
        geometry = []
        for inst in self.obstacles:
            if inst.adef.projectile is not None:
                shapes = [{"link": 0, "shape": {
                    "type": "sphere", "center": [0.0, 0.0, 0.0],
                    "radius": inst.adef.projectile.radius,
                }}]
            else:
                shapes = [
                    {"link": link, "shape": world.shape_to_dict(s)}
                    for link, s in inst.adef.colliders
                ]
            geometry.append({
                "oid": inst.oid, "kind": inst.adef.kind, "label": inst.label,
                "mass": inst.mass, "expected_mass": inst.expected_mass,
                "shapes": shapes,
            })
        return {
            "scenario": self.sc.raw,
            "rig": {"name": self.rig.name, "joints": joints},
            "geometry": geometry,
        }


def _fk_dict(fk: tuple[list[Vec3], list[Quat]]) -> dict:
    pos, rot = fk
    return {"pos": [list(p) for p in pos], "rot": [list(q) for q in rot]}


def _obstacle_dict(inst: world.ObstacleInstance) -> dict:
    if inst.adef.projectile is not None:
        links = [{"pos": list(inst.pos), "rot": [1.0, 0.0, 0.0, 0.0]}]
    else:
        pos, rot, _ = dyn.chain_transforms(inst.cdef, inst.state)
        links = [
            {"pos": list(p), "rot": list(q)} for p, q in zip(pos, rot)
        ]
    return {"oid": inst.oid, "frozen": inst.frozen, "links": links}


# ---------------------------------------------------------------------------
# run / replay
# ---------------------------------------------------------------------------

def _summarize(frames: int, dt: float, wall_ns: list[int],
               contacts: int, contact_frames: int,
               phase_hist: dict) -> dict:
    mean_ms = (sum(wall_ns) / len(wall_ns)) / 1e6 if wall_ns else 0.0
    max_ms = max(wall_ns) / 1e6 if wall_ns else 0.0
    return {
        "frames": frames,
        "sim_seconds": frames * dt,
        "mean_step_ms": mean_ms,
        "max_step_ms": max_ms,
        "contacts_total": contacts,
        "contact_frames": contact_frames,
        "phase_hist": phase_hist,
    }


def run(
    scenario: Scenario,
    out_path: str,
    inputs: Callable[[int], TickInput | None] | None = None,
    on_frame: Callable[[dict], None] | None = None,
) -> dict:
    """Simulate a scenario to a telemetry file; returns the summary record."""
    engine = Engine(scenario)
    frames = max(1, round(scenario.duration / scenario.dt))
    wall: list[int] = []
    contacts = 0
    contact_frames = 0
    phase_hist: dict[str, dict[str, int]] = {h: {} for h in HANDS}
    with telemetry.TelemetryWriter(out_path) as w:
        w.write_header(engine.header())
        try:
            for i in range(frames):
                rec = engine.tick(inputs(i) if inputs is not None else None)
                w.write_frame(rec)
                wall.append(rec["wall_ns"])
                if rec["contacts"]:
                    contact_frames += 1
                    contacts += len(rec["contacts"])
                for h in HANDS:
                    ph = rec["gesture"][h]["phase"]
                    phase_hist[h][ph] = phase_hist[h].get(ph, 0) + 1
                if on_frame is not None:
                    on_frame(rec)
        except dyn.SimulationFault as e:
            # The stream already holds every frame; flag the abort and keep
            # the partial file verifiable.
            w.write_fault(str(e), engine.frame, getattr(e, "detail", None))
            stats = _summarize(engine.frame, scenario.dt, wall,
                               contacts, contact_frames, phase_hist)
            stats["fault"] = str(e)
            w.write_summary(stats)
            raise
        stats = _summarize(frames, scenario.dt, wall, contacts,
                           contact_frames, phase_hist)
        for msg in engine.warnings:
            stats.setdefault("warnings", []).append(msg)
        stats["hash"] = w.write_summary(stats)
    return stats


def _inputs_from_frames(frames: list[dict]) -> Callable[[int], TickInput | None]:
    def provider(i: int) -> TickInput | None:
        rec = frames[i]
        steer = rec.get("steer")
        override = rec.get("override")
        if steer is None and override is None:
            return None
        return TickInput(
            steer=(tuple(steer["dir"]), steer["speed"]) if steer else None,
            override=(
                {k: tuple(v) for k, v in override.items()} if override else None
            ),
        )
    return provider


def verify_replay(path: str) -> tuple[bool, str, str]:
    """Re-simulate a telemetry file from its own header.

    Returns (ok, recorded_hash, recomputed_hash). The recorded inputs
    (steer + overrides) are re-injected so externally steered sessions
    verify the same way scripted ones do.
    """
    header, frames, summary = telemetry.load_run(path)
    stored = summary["hash"] if summary and "hash" in summary else None
    if stored is None:
        raise telemetry.TelemetryError(f"{path}: no hash in summary")

    scenario = load_scenario(header["scenario"])
    engine = Engine(scenario)
    hasher = telemetry.RunHasher()
    hasher.add({"type": "header", "schema": telemetry.SCHEMA_VERSION,
                **engine.header()})
    provider = _inputs_from_frames(frames)
    for i in range(len(frames)):
        rec = engine.tick(provider(i))
        hasher.add({"type": "frame", **rec})
    fresh = hasher.hexdigest()
    return fresh == stored, stored, fresh
