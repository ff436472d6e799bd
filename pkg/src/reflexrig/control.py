"""Antagonistic joint control.

Each actuated axis carries a pair of opposing springs anchored at the soft
limits: torque = k_L(theta_L - theta) + k_H(theta_H - theta) - k_d*thetadot.
Given a kinematic target angle and the external torque expected there, the
upper gain k_H is solved so that the spring pair balances the load exactly at
the target. The lower gain k_L stays a free tension parameter: any value in
bounds yields the same equilibrium, but stiffer pairs snap back harder after
a disturbance, softer pairs give and recover slowly.

Gains are solved once per render frame from the current target; the damping
term is refit whenever the gain pair changes so the axis stays near
critically damped across the full tension range.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt, tau
from typing import TYPE_CHECKING

from .math3d import (
    Basis,
    IDENTITY_BASIS,
    Quat,
    Vec3,
    decompose_xyz,
    euler_xyz,
    quat_conj,
    quat_mul,
    signed_angle_about,
)

if TYPE_CHECKING:  # pragma: no cover
    from .skeleton import Rig

# Lower-gain bounds for shoulder-class joints; other joints scale these by
# their per-joint gain factor.
K_L_MIN = 10.0
K_L_MAX = 400.0

# Expected mass (kg) at which the mass-to-stiffness law saturates.
MASS_FOR_MAX_GAIN = 15.0

# Per-axis actuator torque capacity.
TAU_MAX = 150.0

# Damping fit and target-clamp margin.
DAMPING_RATIO = 0.9
TARGET_MARGIN = 0.02

# Actuation budget: k_l + k_h may not exceed STIFF_RATE_MAX * axis inertia.
# Stiffer pairs oscillate faster than the integrator resolves at sane substep
# counts. The solve slides down the tension isoline, which preserves the
# commanded equilibrium, until the pair fits the budget.
STIFF_RATE_MAX = 4.0e5

# Target/high-limit separation below which the gain solve is refused.
SINGULAR_TOL = 1e-4


class SingularTargetError(ValueError):
    """Target angle sits on the upper soft limit; gain solve is undefined."""


@dataclass
class AntagonisticAxis:
    """Spring pair for one rotational degree of freedom."""

    theta_l: float
    theta_h: float
    k_l: float
    k_l_min: float = K_L_MIN
    k_l_max: float = K_L_MAX
    k_h: float = 0.0
    k_d: float = 0.0
    k_l_eff: float = 0.0  # lower gain actually driven, after the budget cut

    def __post_init__(self) -> None:
        if not self.theta_l < self.theta_h:
            raise ValueError(
                f"soft limits out of order: [{self.theta_l}, {self.theta_h}]"
            )
        self.k_l = clamp_gain(self.k_l, self.k_l_min, self.k_l_max)
        self.k_l_eff = self.k_l


def clamp_gain(k: float, lo: float, hi: float) -> float:
    return min(max(k, lo), hi)


def stiffness_from_mass(
    m: float, m_max: float, k_l_min: float, k_l_max: float
) -> float:
    """Map a carried mass to a lower gain, linear between the bounds."""
    if m < 0.0 or m_max <= 0.0:
        raise ValueError(f"bad mass inputs: m={m}, m_max={m_max}")
    return clamp_gain(k_l_min + (k_l_max - k_l_min) * m / m_max, k_l_min, k_l_max)


def isoline_high_gain(
    k_l: float,
    theta_l: float,
    theta_h: float,
    theta_kin: float,
    tau_ext_kin: float,
) -> tuple[float, bool]:
    """Upper gain making the spring pair balance tau_ext at theta_kin.

    Returns (k_h, clamped). ``clamped`` is set when the raw solution was
    negative (target not reachable with this load direction at this k_l) and
    the gain was floored at zero; the joint then sags away from the target,
    which is the intended read of an over-demanding pose.
    """
    if abs(theta_kin - theta_h) < SINGULAR_TOL:
        raise SingularTargetError(
            f"target {theta_kin} within {SINGULAR_TOL} of upper limit {theta_h}"
        )
    k_h = k_l * (theta_l - theta_kin) / (theta_kin - theta_h) - tau_ext_kin / (
        theta_h - theta_kin
    )
    if k_h < 0.0:
        return 0.0, True
    return k_h, False


def axis_torque(
    theta: float, rate: float, axis: AntagonisticAxis, tau_max: float = TAU_MAX
) -> float:
    """Actuator torque of the spring pair, clamped to capacity."""
    tau = (
        axis.k_l_eff * (axis.theta_l - theta)
        + axis.k_h * (axis.theta_h - theta)
        - axis.k_d * rate
    )
    return min(max(tau, -tau_max), tau_max)


def critical_damping(k_l: float, k_h: float, inertia: float) -> float:
    return 2.0 * DAMPING_RATIO * sqrt(max(k_l + k_h, 0.0) * max(inertia, 0.0))


@dataclass
class JointController:
    """Per-joint bundle: one spring pair per enabled axis.

    ``axes`` holds three slots ordered x, y, z in the joint's parent-relative
    frame; disabled degrees of freedom are None. ``b0`` is the reference-pose
    local orientation that angle extraction is measured against.
    """

    name: str
    b0: Quat
    axes: list[AntagonisticAxis | None]
    basis: Basis = IDENTITY_BASIS
    tau_max: float = TAU_MAX


@dataclass
class ControlResult:
    torque: Vec3
    k_l: Vec3
    k_h: Vec3
    clamped: bool = False  # some axis left the isoline (k_h floored or pair derated)
    target_clamped: bool = False  # some target angle pulled inside soft range
    saturated: bool = False  # some axis hit torque capacity
    angles: Vec3 = (0.0, 0.0, 0.0)  # current per-axis angles as solved
    targets: Vec3 = (0.0, 0.0, 0.0)  # target angles on the tracked branch


def controller_for_joint(
    rig: "Rig", joint: int, k_l: float | None = None
) -> JointController:
    """Build a controller from a rig joint's soft limits and gain scale."""
    j = rig.joints[joint]
    lo_k = K_L_MIN * j.gain_scale
    hi_k = K_L_MAX * j.gain_scale
    axes: list[AntagonisticAxis | None] = []
    for k in range(3):
        if not j.dof[k]:
            axes.append(None)
            continue
        lo, hi = j.soft_limits[k]
        axes.append(
            AntagonisticAxis(
                theta_l=lo,
                theta_h=hi,
                k_l=k_l if k_l is not None else lo_k,
                k_l_min=lo_k,
                k_l_max=hi_k,
            )
        )
    return JointController(name=j.name, b0=j.tpose_rot, axes=axes)


def _basis_angles(q: Quat, basis: Basis) -> Vec3:
    """Ordered angles of ``q`` about the controller's axis triple."""
    if basis is IDENTITY_BASIS:
        return euler_xyz(q)
    qx, qy, qz = decompose_xyz(q, basis)
    return (
        signed_angle_about(qx, basis[0]),
        signed_angle_about(qy, basis[1]),
        signed_angle_about(qz, basis[2]),
    )


def nearest_triple(targets: Vec3, angles: Vec3) -> Vec3:
    """Map target angles onto the equivalent x-y-z branch nearest ``angles``.

    The chart double-covers each rotation: (x, y, z) and (x-pi, pi-y, z-pi),
    modulo 2*pi per axis, recompose to the same quaternion. Raw decomposition
    lands on an arbitrary branch and can jump a continuous target by ~pi per
    axis when the middle angle crosses +/-pi/2; the controller has to chase
    whichever branch the joint state currently lives on.
    """

    def near(base: float, ref: float) -> float:
        return base + tau * round((ref - base) / tau)

    alt = (targets[0] - pi, pi - targets[1], targets[2] - pi)
    cand_a = tuple(near(v, r) for v, r in zip(targets, angles))
    cand_b = tuple(near(v, r) for v, r in zip(alt, angles))
    d_a = sum((v - r) ** 2 for v, r in zip(cand_a, angles))
    d_b = sum((v - r) ** 2 for v, r in zip(cand_b, angles))
    return cand_a if d_a <= d_b else cand_b


def clamp_target(theta_kin: float, axis: AntagonisticAxis) -> tuple[float, bool]:
    """Pull a target angle strictly inside the soft range."""
    lo = axis.theta_l + TARGET_MARGIN
    hi = axis.theta_h - TARGET_MARGIN
    if lo > hi:  # degenerate wedge: collapse to its midpoint
        mid = 0.5 * (axis.theta_l + axis.theta_h)
        return mid, True
    if theta_kin < lo:
        return lo, True
    if theta_kin > hi:
        return hi, True
    return theta_kin, False


def solve_axis(
    axis: AntagonisticAxis,
    theta_kin: float,
    tau_ext_kin: float,
    inertia: float,
) -> tuple[bool, bool]:
    """Refit (k_h, k_d) for one axis; returns (gain_clamped, target_clamped)."""
    target, target_clamped = clamp_target(theta_kin, axis)
    k_l = axis.k_l
    k_h, gain_clamped = isoline_high_gain(
        k_l, axis.theta_l, axis.theta_h, target, tau_ext_kin
    )
    budget = STIFF_RATE_MAX * inertia
    if k_l + k_h > budget:
        # k_h is affine in k_l at fixed target and load, so the cut lands
        # exactly on the budget while staying on the isoline. Equilibrium
        # only sags when the load term alone overflows the budget.
        denom = axis.theta_h - target
        slope = (target - axis.theta_l) / denom
        load = -tau_ext_kin / denom
        k_l = max(0.0, (budget - load) / (1.0 + slope))
        k_h = max(0.0, min(slope * k_l + load, budget - k_l))
        gain_clamped = True
    axis.k_l_eff = k_l
    axis.k_h = k_h
    axis.k_d = critical_damping(k_l, k_h, inertia)
    return gain_clamped, target_clamped


def compute_joint_torque(
    b: Quat,
    b_kin: Quat,
    ctrl: JointController,
    rates: Vec3,
    tau_ext_kin: Vec3 = (0.0, 0.0, 0.0),
    axis_inertia: Vec3 = (1.0, 1.0, 1.0),
) -> ControlResult:
    """Solve gains against the kinematic target and emit the local torque.

    ``b`` and ``b_kin`` are current and target local orientations, both
    measured in the same parent frame as ``ctrl.b0``. ``tau_ext_kin`` holds
    the external-torque estimate at the target pose, projected on the three
    axis directions; ``axis_inertia`` the per-axis effective inertias used by
    the damping fit.
    """
    q = quat_mul(b, quat_conj(ctrl.b0))
    q_kin = quat_mul(b_kin, quat_conj(ctrl.b0))
    angles = _basis_angles(q, ctrl.basis)
    targets = nearest_triple(_basis_angles(q_kin, ctrl.basis), angles)
    torque = [0.0, 0.0, 0.0]
    k_l_out = [0.0, 0.0, 0.0]
    k_h_out = [0.0, 0.0, 0.0]
    clamped = target_clamped = saturated = False
    for k in range(3):
        axis = ctrl.axes[k]
        if axis is None:
            continue
        g_cl, t_cl = solve_axis(axis, targets[k], tau_ext_kin[k], axis_inertia[k])
        clamped |= g_cl
        target_clamped |= t_cl
        tau = axis_torque(angles[k], rates[k], axis, ctrl.tau_max)
        saturated |= abs(tau) >= ctrl.tau_max
        torque[k] = tau
        k_l_out[k] = axis.k_l_eff
        k_h_out[k] = axis.k_h
    return ControlResult(
        torque=(torque[0], torque[1], torque[2]),
        k_l=(k_l_out[0], k_l_out[1], k_l_out[2]),
        k_h=(k_h_out[0], k_h_out[1], k_h_out[2]),
        clamped=clamped,
        target_clamped=target_clamped,
        saturated=saturated,
        angles=angles,
        targets=targets,
    )


def set_lower_gain(ctrl: JointController, k_l: float) -> None:
    """Retension every axis of a joint; k_h/k_d refit on the next solve."""
    for axis in ctrl.axes:
        if axis is not None:
            axis.k_l = clamp_gain(k_l, axis.k_l_min, axis.k_l_max)
            axis.k_l_eff = axis.k_l


def holding_lower_gain(ctrl: JointController, b_kin: Quat, tau_ext_kin: Vec3) -> float:
    """Smallest uniform k_l whose isoline keeps every axis's k_h nonnegative.

    A load pushing an axis toward its upper limit can only be balanced at
    the target by the lower spring; below this tension the pair's
    equilibrium sags away from ``b_kin`` no matter what k_h does. Returns
    0.0 when every axis already balances at any tension.
    """
    q_kin = quat_mul(b_kin, quat_conj(ctrl.b0))
    targets = _basis_angles(q_kin, ctrl.basis)
    need = 0.0
    for k in range(3):
        axis = ctrl.axes[k]
        if axis is None:
            continue
        target, _ = clamp_target(targets[k], axis)
        span = target - axis.theta_l
        if span > SINGULAR_TOL and tau_ext_kin[k] > 0.0:
            need = max(need, tau_ext_kin[k] / span)
    return need
