"""Shared builders for single-joint test chains."""

import math

from reflexrig import dynamics as dyn
from reflexrig import math3d as m3

X_AXIS = (1.0, 0.0, 0.0)
FLIP_X = m3.quat_from_axis_angle(X_AXIS, math.pi)
WIDE_LIMITS = ((-4.0, 4.0), (-4.0, 4.0), (-4.0, 4.0))


def hinge_chain(
    mass=2.0,
    com_dist=0.5,
    radius=0.05,
    limits=WIDE_LIMITS,
    rest=FLIP_X,
    gravity_scale=1.0,
):
    """One x-hinge with a capsule bob; rest pose hangs the bone down."""
    body = dyn.RigidBodyDef(
        mass, (0.0, com_dist, 0.0), dyn.capsule_inertia(mass, radius, 2.0 * com_dist)
    )
    node = dyn.ChainNode(
        name="link",
        parent=-1,
        offset=(0.0, 0.0, 0.0),
        rest_rot=rest,
        dof=(True, False, False),
        hard_limits=limits,
        body=body,
    )
    return dyn.build_chain([node], gravity_scale=gravity_scale)


def hinge_state(cdef, theta=0.0, rate=0.0):
    state = dyn.rest_state(cdef, (0.0, 0.0, 0.0), m3.IDENTITY)
    state.rot[0] = m3.quat_mul(
        m3.quat_from_euler_xyz(theta, 0.0, 0.0), cdef.nodes[0].rest_rot
    )
    state.vel[0] = (rate, 0.0, 0.0)
    return state
