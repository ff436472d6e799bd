import math

import pytest

from reflexrig import defaults, dynamics as dyn, skeleton as sk
from reflexrig import math3d as m3

X = (1.0, 0.0, 0.0)
FLIP = m3.quat_from_axis_angle(X, math.pi)  # local +Y points world-down
WIDE = ((-4.0, 4.0), (-4.0, 4.0), (-4.0, 4.0))


def _pendulum(mass=2.0, com_dist=0.5, radius=0.05, limits=WIDE):
    """Single hinge about x, bone hanging down at rest."""
    body = dyn.RigidBodyDef(
        mass, (0.0, com_dist, 0.0), dyn.capsule_inertia(mass, radius, 2.0 * com_dist)
    )
    node = dyn.ChainNode(
        name="rod",
        parent=-1,
        offset=(0.0, 0.0, 0.0),
        rest_rot=FLIP,
        dof=(True, False, False),
        hard_limits=limits,
        body=body,
    )
    return dyn.build_chain([node])


def _displace(cdef, angles_x):
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    for i, a in enumerate(angles_x):
        state.rot[i] = m3.quat_mul(
            m3.quat_from_euler_xyz(a, 0.0, 0.0), cdef.nodes[i].rest_rot
        )
    return state


def _rk4_pendulum(theta0, omega0, coeff, t_end, dt):
    """Reference integration of theta'' = -coeff*sin(theta)."""
    th, om = theta0, omega0
    for _ in range(round(t_end / dt)):
        k1t, k1o = om, -coeff * math.sin(th)
        k2t = om + 0.5 * dt * k1o
        k2o = -coeff * math.sin(th + 0.5 * dt * k1t)
        k3t = om + 0.5 * dt * k2o
        k3o = -coeff * math.sin(th + 0.5 * dt * k2t)
        k4t = om + dt * k3o
        k4o = -coeff * math.sin(th + dt * k3t)
        th += dt * (k1t + 2.0 * k2t + 2.0 * k3t + k4t) / 6.0
        om += dt * (k1o + 2.0 * k2o + 2.0 * k3o + k4o) / 6.0
    return th, om


def _pendulum_coeff(cdef):
    body = cdef.nodes[0].body
    d = body.com[1]
    i_eff = body.inertia[0] + body.mass * d * d
    return body.mass * 9.81 * d / i_eff, i_eff


# ---------------------------------------------------------------------------
# inertia helpers
# ---------------------------------------------------------------------------

def test_capsule_inertia_sphere_limit():
    got = dyn.capsule_inertia(3.0, 0.2, 0.0)
    want = 0.4 * 3.0 * 0.2 * 0.2
    for g in got:
        assert abs(g - want) < 1e-12


def test_capsule_inertia_slender_rod_limit():
    m, length = 2.0, 1.0
    ix, iy, iz = dyn.capsule_inertia(m, 1e-4, length)
    rod = m * length * length / 12.0
    assert abs(ix - rod) / rod < 1e-3
    assert ix == iz
    assert iy < 1e-6  # spin about the long axis is nearly free


def test_capsule_inertia_rejects_degenerate():
    with pytest.raises(ValueError):
        dyn.capsule_inertia(1.0, 0.0, 0.0)


def test_effective_inertia_point_mass_oracle():
    body = dyn.RigidBodyDef(2.0, (0.0, 0.5, 0.0), (0.1, 0.02, 0.1))
    node = dyn.ChainNode("n", -1, (0.0, 0.0, 0.0), m3.IDENTITY,
                         (True, True, True), WIDE, body)
    cdef = dyn.build_chain([node])
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    (ine,) = dyn.effective_inertias(cdef, state)
    # Perpendicular axes pick up the parallel-axis term m*d^2.
    assert abs(ine[0] - (0.1 + 2.0 * 0.25)) < 1e-12
    assert abs(ine[2] - (0.1 + 2.0 * 0.25)) < 1e-12
    # Along the bone the com sits on the axis line.
    assert abs(ine[1] - 0.02) < 1e-12


def test_effective_inertia_includes_descendants():
    b0 = dyn.RigidBodyDef(2.0, (0.0, 0.5, 0.0), (0.1, 0.02, 0.1))
    b1 = dyn.RigidBodyDef(1.0, (0.0, 0.5, 0.0), (0.05, 0.01, 0.05))
    nodes = [
        dyn.ChainNode("a", -1, (0.0, 0.0, 0.0), m3.IDENTITY,
                      (True, True, True), WIDE, b0),
        dyn.ChainNode("b", 0, (0.0, 1.0, 0.0), m3.IDENTITY,
                      (True, True, True), WIDE, b1),
    ]
    cdef = dyn.build_chain(nodes)
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    inertias = dyn.effective_inertias(cdef, state)
    # Root x-axis sees both bodies: own terms plus m*d^2 at 0.5 and 1.5.
    want = (0.1 + 2.0 * 0.25) + (0.05 + 1.0 * 2.25)
    assert abs(inertias[0][0] - want) < 1e-12
    assert abs(inertias[1][0] - (0.05 + 1.0 * 0.25)) < 1e-12


def test_effective_inertia_floors():
    node = dyn.ChainNode("empty", -1, (0.0, 0.0, 0.0), m3.IDENTITY,
                         (True, False, True), WIDE, None)
    cdef = dyn.build_chain([node])
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    (ine,) = dyn.effective_inertias(cdef, state)
    assert ine == (dyn.I_MIN, dyn.I_MIN, dyn.I_MIN)


# ---------------------------------------------------------------------------
# torque primitives
# ---------------------------------------------------------------------------

def test_limit_penalty_values():
    assert dyn.limit_penalty(0.5, 3.0, -1.0, 1.0) == 0.0
    assert dyn.limit_penalty(-1.2, -2.0, -1.0, 1.0) == pytest.approx(140.0)
    assert dyn.limit_penalty(1.3, 0.5, -1.0, 1.0) == pytest.approx(-160.0)


def test_pd_torque_values():
    assert dyn.pd_torque(100.0, 10.0, 0.3, 0.1, 0.5) == pytest.approx(15.0)
    assert dyn.pd_torque(50.0, 5.0, 0.0, 0.0, 0.0) == 0.0


def test_gravity_torque_synthetic_oracle():
    joints = [
        sk.Joint("root", -1, (0.0, 0.0, 0.0), m3.IDENTITY, admissible_anchor=True),
        sk.Joint(
            "tip", 0, (0.3, 0.0, 0.0), m3.IDENTITY,
            body=dyn.RigidBodyDef(2.0, (0.0, 0.0, 0.0), (0.01, 0.01, 0.01)),
        ),
    ]
    rig = sk.Rig.create("mini", joints)
    pose = sk.Pose([j.tpose_pos for j in joints], [j.tpose_rot for j in joints])
    tau = dyn.gravity_torque_at_pose(rig, pose, 0)
    assert m3.vdist(tau, (0.0, 0.0, -0.3 * 2.0 * 9.81)) < 1e-12


def test_gravity_torque_elbow_tpose_oracle():
    # Arm lies along +X in the T pose, so r x mg is hand-computable:
    # forearm com 0.11 m out, hand com 0.22 + 0.08 m out.
    rig = defaults.default_rig()
    pose = sk.Pose(
        [j.tpose_pos for j in rig.joints], [j.tpose_rot for j in rig.joints]
    )
    tau = dyn.gravity_torque_at_pose(rig, pose, defaults.FOREARM_L)
    want_z = -9.81 * (1.59 * 0.11 + 0.5 * 0.30)
    assert abs(tau[0]) < 1e-9
    assert abs(tau[1]) < 1e-9
    assert abs(tau[2] - want_z) < 1e-9


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def test_step_rejects_bad_dt():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    with pytest.raises(ValueError):
        dyn.step_chain(cdef, state, 0.0)
    with pytest.raises(ValueError):
        dyn.step_chain(cdef, state, 0.05)


def test_rest_under_gravity_is_stationary():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    for _ in range(100):
        state = dyn.step_chain(cdef, state, 1.0 / 120.0)
    # Not exactly zero: the flipped rest quaternion carries cos(pi/2) rounding.
    assert all(abs(v) < 1e-12 for v in state.vel[0])
    assert all(abs(a) < 1e-12 for a in dyn.joint_angles(cdef, state)[0])


def test_constant_torque_matches_discrete_closed_form():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    inertia = dyn.effective_inertias(cdef, state)
    tau, dt, n = 0.8, 1.0 / 120.0, 100
    acc = tau / inertia[0][0]
    for _ in range(n):
        state = dyn.step_chain(
            cdef, state, dt, torques=[(tau, 0.0, 0.0)],
            gravity=(0.0, 0.0, 0.0), axis_inertia=inertia,
        )
    # Semi-implicit Euler accumulates theta_n = a*dt^2 * n(n+1)/2 exactly.
    want = acc * dt * dt * n * (n + 1) / 2.0
    got = dyn.joint_angles(cdef, state)[0][0]
    assert abs(got - want) < 1e-10
    assert abs(state.vel[0][0] - acc * dt * n) < 1e-12


def test_pendulum_tracks_reference_integrator():
    cdef = _pendulum()
    coeff, _ = _pendulum_coeff(cdef)
    theta0, t_end = math.pi / 2.0, 1.0
    dt = 1.0 / 19200.0
    state = _displace(cdef, [theta0])
    for _ in range(round(t_end / dt)):
        state = dyn.step_chain(cdef, state, dt)
    got = dyn.joint_angles(cdef, state)[0][0]
    want, _ = _rk4_pendulum(theta0, 0.0, coeff, t_end, dt / 2.0)
    assert abs(got - want) < 2e-3


def test_pendulum_convergence_is_first_order():
    cdef = _pendulum()
    coeff, _ = _pendulum_coeff(cdef)
    theta0, t_end = 1.0, 0.7
    ref_th, ref_om = _rk4_pendulum(theta0, 0.0, coeff, t_end, 1e-4)
    omega = math.sqrt(coeff)
    errs = []
    for dt in (1.0 / 480.0, 1.0 / 960.0, 1.0 / 1920.0):
        state = _displace(cdef, [theta0])
        for _ in range(round(t_end / dt)):
            state = dyn.step_chain(cdef, state, dt)
        th = dyn.joint_angles(cdef, state)[0][0]
        om = state.vel[0][0]
        errs.append(math.hypot(th - ref_th, (om - ref_om) / omega))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert all(p > 0.85 for p in orders), (errs, orders)


def test_pendulum_energy_stays_bounded():
    cdef = _pendulum()
    state = _displace(cdef, [1.0])
    peak = 0.0
    for _ in range(2400):
        state = dyn.step_chain(cdef, state, 1.0 / 240.0)
        peak = max(peak, abs(dyn.joint_angles(cdef, state)[0][0]))
    assert peak < 1.0 + 0.05


def test_integration_is_bit_deterministic():
    runs = []
    for _ in range(2):
        cdef = _pendulum()
        state = _displace(cdef, [0.9])
        for _ in range(300):
            state = dyn.step_chain(cdef, state, 1.0 / 120.0)
        runs.append((tuple(state.rot), tuple(state.vel)))
    assert runs[0] == runs[1]


def test_damped_two_link_settles_hanging():
    b0 = dyn.RigidBodyDef(2.0, (0.0, 0.3, 0.0), dyn.capsule_inertia(2.0, 0.05, 0.6))
    b1 = dyn.RigidBodyDef(1.0, (0.0, 0.25, 0.0), dyn.capsule_inertia(1.0, 0.04, 0.5))
    nodes = [
        dyn.ChainNode("upper", -1, (0.0, 0.0, 0.0), FLIP,
                      (True, False, False), WIDE, b0),
        dyn.ChainNode("lower", 0, (0.0, 0.6, 0.0), m3.IDENTITY,
                      (True, False, False), WIDE, b1),
    ]
    cdef = dyn.build_chain(nodes)
    state = _displace(cdef, [1.2, -0.6])
    dt = 1.0 / 240.0
    for _ in range(int(8.0 / dt)):
        tq = [m3.vscale(v, -2.0) for v in state.vel]
        state = dyn.step_chain(cdef, state, dt, torques=tq)
    angles = dyn.joint_angles(cdef, state)
    _, rot, _ = dyn.chain_transforms(cdef, state)
    for i in range(2):
        assert abs(angles[i][0]) < 0.02
        assert abs(state.vel[i][0]) < 0.01
        down = m3.quat_rotate(rot[i], (0.0, 1.0, 0.0))
        assert m3.vdist(down, (0.0, -1.0, 0.0)) < 0.03


def test_zero_gravity_scale_ignores_gravity():
    body = dyn.RigidBodyDef(2.0, (0.0, 0.4, 0.0), dyn.capsule_inertia(2.0, 0.05, 0.8))
    node = dyn.ChainNode("stalk", -1, (0.0, 0.0, 0.0), m3.IDENTITY,
                         (True, False, True), WIDE, body)
    cdef = dyn.build_chain([node], gravity_scale=0.0)
    state = _displace(cdef, [0.7])
    for _ in range(50):
        state = dyn.step_chain(cdef, state, 1.0 / 120.0)
    assert state.vel[0] == (0.0, 0.0, 0.0)
    assert abs(dyn.joint_angles(cdef, state)[0][0] - 0.7) < 1e-12


def test_hard_limit_arrests_driven_joint():
    cdef = _pendulum(limits=((-0.3, 0.3), (-4.0, 4.0), (-4.0, 4.0)))
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    dt = 1.0 / 240.0
    for _ in range(int(3.0 / dt)):
        tq = [(20.0 - 0.5 * state.vel[0][0], 0.0, 0.0)]
        state = dyn.step_chain(cdef, state, dt, torques=tq, gravity=(0.0, 0.0, 0.0))
    theta = dyn.joint_angles(cdef, state)[0][0]
    # Settles just past the stop, at penetration tau/k.
    assert 0.3 < theta < 0.3 + 20.0 / dyn.K_LIMIT + 0.02
    assert abs(state.vel[0][0]) < 0.05


def test_point_force_propagates_to_ancestors():
    b0 = dyn.RigidBodyDef(1.0, (0.0, 0.5, 0.0), (0.05, 0.01, 0.05))
    b1 = dyn.RigidBodyDef(1.0, (0.0, 0.5, 0.0), (0.05, 0.01, 0.05))
    nodes = [
        dyn.ChainNode("a", -1, (0.0, 0.0, 0.0), m3.IDENTITY,
                      (True, True, True), WIDE, b0),
        dyn.ChainNode("b", 0, (0.0, 1.0, 0.0), m3.IDENTITY,
                      (True, True, True), WIDE, b1),
    ]
    cdef = dyn.build_chain(nodes)
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    inertias = dyn.effective_inertias(cdef, state)
    load = dyn.ExternalLoad(forces=[(1, (0.0, 2.0, 0.0), (1.0, 0.0, 0.0))])
    nxt = dyn.step_chain(
        cdef, state, 1.0 / 120.0, load=load, gravity=(0.0, 0.0, 0.0)
    )
    # Force at the tip torques both joints about -z (r x F with r up, F +x).
    dt = 1.0 / 120.0
    assert nxt.vel[0][2] == pytest.approx(-2.0 / inertias[0][2] * dt)
    assert nxt.vel[1][2] == pytest.approx(-1.0 / inertias[1][2] * dt)
    assert nxt.vel[0][0] == 0.0  # no x component from this force


def test_point_velocity_matches_rigid_rotation():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    omega = 2.0
    state.vel[0] = (omega, 0.0, 0.0)
    tf = dyn.chain_transforms(cdef, state)
    tip = (0.0, -1.0, 0.0)
    v = dyn.point_velocity(cdef, state, tf, 0, tip)
    assert m3.vdist(v, (0.0, 0.0, -omega)) < 1e-12
    state.base_vel = (0.5, 0.0, 0.0)
    v = dyn.point_velocity(cdef, state, tf, 0, tip)
    assert m3.vdist(v, (0.5, 0.0, -omega)) < 1e-12


def test_non_finite_state_raises_fault():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    with pytest.raises(dyn.SimulationFault) as exc:
        dyn.step_chain(cdef, state, 1.0 / 120.0, torques=[(math.nan, 0.0, 0.0)])
    assert exc.value.diagnostics["node"] == "rod"


def test_chain_state_copy_is_independent():
    cdef = _pendulum()
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    dup = state.copy()
    dup.rot[0] = m3.quat_from_axis_angle(X, 0.5)
    dup.vel[0] = (1.0, 0.0, 0.0)
    assert state.rot[0] == FLIP
    assert state.vel[0] == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# chains lifted from the character rig
# ---------------------------------------------------------------------------

def test_chain_from_subtree_matches_skeleton_fk():
    rig = defaults.default_rig()
    clip = defaults.walk_clip(rig)
    pose = sk.sample_clip(clip, 0.21)
    pos_w, rot_w = sk.forward_kinematics(rig, pose)

    anchor = defaults.SHOULDER_L
    cdef, joints = dyn.chain_from_subtree(rig, anchor)
    assert joints[0] == anchor
    parent = rig.joints[anchor].parent
    state = dyn.ChainState(
        base_pos=pos_w[parent],
        base_rot=rot_w[parent],
        rot=[pose.rotations[j] for j in joints],
        vel=[(0.0, 0.0, 0.0) for _ in joints],
    )
    pos_c, rot_c, _ = dyn.chain_transforms(cdef, state)
    for i, j in enumerate(joints):
        assert m3.vdist(pos_c[i], pos_w[j]) < 1e-12
        gap = m3.quat_angle(m3.quat_mul(rot_c[i], m3.quat_conj(rot_w[j])))
        assert gap < 1e-9


def test_chain_from_root_anchor_covers_whole_rig():
    rig = defaults.default_rig()
    clip = defaults.walk_clip(rig)
    pose = sk.sample_clip(clip, 0.4)
    pos_w, rot_w = sk.forward_kinematics(rig, pose)

    cdef, joints = dyn.chain_from_subtree(rig, defaults.HIPS)
    assert len(joints) == len(rig.joints)
    assert cdef.nodes[0].offset == (0.0, 0.0, 0.0)
    state = dyn.ChainState(
        base_pos=pose.positions[0],
        base_rot=m3.IDENTITY,
        rot=[pose.rotations[j] for j in joints],
        vel=[(0.0, 0.0, 0.0) for _ in joints],
    )
    pos_c, rot_c, _ = dyn.chain_transforms(cdef, state)
    for i, j in enumerate(joints):
        assert m3.vdist(pos_c[i], pos_w[j]) < 1e-12


def test_build_chain_rejects_disorder():
    node = dyn.ChainNode("n", 1, (0.0, 0.0, 0.0), m3.IDENTITY,
                         (True, True, True), WIDE, None)
    with pytest.raises(ValueError):
        dyn.build_chain([node])
