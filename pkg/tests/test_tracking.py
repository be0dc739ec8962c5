import math

import numpy as np
import pytest

from pushcraft.arcs import connect_arc, sample_arc
from pushcraft.geometry import Polygon, SE2State, Workspace
from pushcraft.modegen import boundary_point
from pushcraft.statics import (
    ContactPoint,
    InteractionMode,
    ObjectIntrinsics,
    TOL_LP,
)
from pushcraft.tracking import (
    RefinedTrajectory,
    TrackerConfig,
    _euler_rollout,
    contact_targets,
    local_goal_on,
    refine_trajectory,
    robot_commands,
)


@pytest.fixture(scope="module")
def square():
    shape = Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    intr = ObjectIntrinsics.from_polygon(shape, 1.0, 0.3, 0.3)
    return shape, intr


def mode_at(shape, intr, params, push_scale=2.0):
    contacts = []
    for t in params:
        pt, nm = boundary_point(shape, t)
        contacts.append(ContactPoint(pt, nm, push_scale * intr.f_max, t))
    return InteractionMode(tuple(contacts))


def left_edge_mode(square):
    shape, intr = square
    return mode_at(shape, intr, [0.80, 0.95])


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        TrackerConfig(horizon_steps=1)
    with pytest.raises(ValueError):
        TrackerConfig(dt=0.0)
    with pytest.raises(ValueError):
        TrackerConfig(k_v=-1.0)
    with pytest.raises(ValueError):
        TrackerConfig(optimizer_hz=0.0)
    assert TrackerConfig().horizon_seconds == pytest.approx(2.0)


def test_trivial_goal_gives_zero_profile(square):
    shape, intr = square
    m = left_edge_mode(square)
    cur = SE2State(0.3, -0.2, 0.4)
    rt = refine_trajectory(cur, cur, m, intr, None, TrackerConfig())
    assert rt.converged
    assert rt.objective == 0.0
    assert rt.total_residual == 0.0
    assert all(np.allclose(v, 0.0) for v in rt.velocities)
    assert rt.states[-1] == cur


def test_straight_allowed_segment_is_constant_velocity(square):
    shape, intr = square
    m = left_edge_mode(square)
    cfg = TrackerConfig()
    cur = SE2State(0.0, 0.0, 0.0)
    goal = SE2State(0.8, 0.0, 0.0)
    rt = refine_trajectory(cur, goal, m, intr, None, cfg)
    assert rt.converged
    assert rt.total_residual <= TOL_LP
    # 0.8 m over 2 s: every step holds the same +x velocity
    v = np.array(rt.velocities)
    assert np.allclose(v[:, 0], 0.4, atol=1e-9)
    assert np.allclose(v[:, 1:], 0.0, atol=1e-9)
    end = rt.states[-1]
    assert math.hypot(end.x - goal.x, end.y - goal.y) <= 1e-9
    assert abs(end.psi - goal.psi) <= 1e-9
    assert all(r <= 10 * TOL_LP for r in rt.residuals)


def test_states_match_velocity_integration(square):
    shape, intr = square
    m = left_edge_mode(square)
    cfg = TrackerConfig(w_smooth=10.0, w_end=100.0)
    rt = refine_trajectory(
        SE2State(0, 0, 0), SE2State(0.15, 0.6, 0.0), m, intr, None, cfg
    )
    rolled = _euler_rollout(rt.start, rt.velocities, cfg.dt)
    for a, b in zip(rolled, rt.states):
        assert abs(a.x - b.x) <= 1e-9
        assert abs(a.y - b.y) <= 1e-9
        assert abs(a.psi - b.psi) <= 1e-9


def test_disallowed_goal_bends_toward_allowed_cone(square):
    shape, intr = square
    m = left_edge_mode(square)
    # +y-heavy goal: edge pushers cannot pull the object sideways
    cur = SE2State(0.0, 0.0, 0.0)
    goal = SE2State(0.15, 0.6, 0.0)
    cfg = TrackerConfig(w_smooth=10.0, w_end=100.0, max_sweeps=40)
    rt = refine_trajectory(cur, goal, m, intr, None, cfg)
    assert rt.total_residual > TOL_LP
    assert not rt.converged

    des = np.array([goal.x, goal.y, 0.0])
    proj = m.wrench_set(intr).project_direction(des)
    assert proj is not None
    mean_v = np.array(rt.velocities).mean(axis=0)

    def planar_angle(a, b):
        na, nb = np.hypot(*a[:2]), np.hypot(*b[:2])
        return math.acos(np.clip(a[:2] @ b[:2] / (na * nb), -1.0, 1.0))

    # refined motion hugs the projection onto the allowed cone, not the
    # raw desired direction
    assert planar_angle(mean_v, proj) < planar_angle(mean_v, des)
    assert planar_angle(mean_v, proj) < math.radians(15.0)


def test_objective_never_worse_than_warm_start(square):
    shape, intr = square
    m = left_edge_mode(square)
    cur = SE2State(0.0, 0.0, 0.0)
    goal = SE2State(0.15, 0.6, 0.0)
    base = dict(w_smooth=10.0, w_end=100.0)
    warm = refine_trajectory(
        cur, goal, m, intr, None, TrackerConfig(max_sweeps=0, **base)
    )
    full = refine_trajectory(
        cur, goal, m, intr, None, TrackerConfig(max_sweeps=40, **base)
    )
    assert full.objective <= warm.objective + 1e-12
    assert full.total_residual < warm.total_residual


def test_obstacle_penalty_pushes_profile_away(square):
    shape, intr = square
    from pushcraft.geometry import PosedObject

    m = left_edge_mode(square)
    bounds = Polygon([(-2.0, -2.0), (4.0, -2.0), (4.0, 2.0), (-2.0, 2.0)])
    block = Polygon([(0.9, -0.62), (1.3, -0.62), (1.3, -0.52), (0.9, -0.52)])
    ws = Workspace(bounds, [block])
    obj = PosedObject(shape)
    cur = SE2State(0.0, 0.0, 0.0)
    goal = SE2State(1.6, 0.0, 0.0)
    cfg = TrackerConfig(w_smooth=10.0, obstacle_margin=0.05, w_obstacle=500.0)
    free = refine_trajectory(cur, goal, m, intr, None, cfg)
    near = refine_trajectory(cur, goal, m, intr, ws, cfg, obj=obj)
    # the block sits just under the swept corridor: penalized run costs more
    assert near.objective >= free.objective


def test_contact_targets_geometry(square):
    shape, intr = square
    m = mode_at(shape, intr, [0.875])
    (cpt, center, heading) = contact_targets(SE2State(0, 0, 0), m, 0.08)[0]
    # mid left edge: contact (-0.5, 0), inward normal +x, center one radius out
    assert np.allclose(cpt, (-0.5, 0.0), atol=1e-12)
    assert np.allclose(center, (-0.58, 0.0), atol=1e-12)
    assert heading == pytest.approx(0.0, abs=1e-12)

    rot = contact_targets(SE2State(1.0, 2.0, math.pi / 2), m, 0.08)[0]
    assert np.allclose(rot[0], (1.0, 1.5), atol=1e-12)
    assert np.allclose(rot[1], (1.0, 1.42), atol=1e-12)
    assert rot[2] == pytest.approx(math.pi / 2)


def test_commands_are_feedforward_at_target(square):
    shape, intr = square
    m = left_edge_mode(square)
    cfg = TrackerConfig()
    rt = refine_trajectory(
        SE2State(0, 0, 0), SE2State(0.8, 0.0, 0.0), m, intr, None, cfg
    )
    radius = 0.08
    robots = [
        SE2State(center[0], center[1], heading)
        for _cpt, center, heading in contact_targets(rt.states[0], m, radius)
    ]
    cmds = robot_commands(rt, m, robots, cfg, radius)
    for (v, om), p in zip(cmds, rt.velocities):
        # robot already on station: command equals the carried object velocity
        assert np.allclose(v, (rt.velocities[0][0], rt.velocities[0][1]), atol=1e-9)
        assert om == pytest.approx(0.0, abs=1e-12)


def test_command_gain_and_clipping(square):
    shape, intr = square
    m = mode_at(shape, intr, [0.875])
    cfg = TrackerConfig(k_v=2.0, v_max=1.0)
    still = RefinedTrajectory(
        start=SE2State(0, 0, 0),
        states=[SE2State(0, 0, 0)] * 3,
        velocities=[np.zeros(3)] * 3,
        residuals=[0.0] * 3,
        objective=0.0,
        converged=True,
    )
    radius = 0.08
    # face 0.1 m short of the contact along -x: P-term alone, |v| = k_v * d
    robot = SE2State(-0.68, 0.0, 0.0)
    (v, om) = robot_commands(still, m, [robot], cfg, radius)[0]
    assert np.allclose(v, (0.2, 0.0), atol=1e-12)
    assert om == pytest.approx(0.0, abs=1e-12)

    far = SE2State(-3.0, 0.0, 0.0)
    (v, om) = robot_commands(still, m, [far], cfg, radius)[0]
    assert np.hypot(v[0], v[1]) == pytest.approx(cfg.v_max)

    spun = SE2State(-0.58, 0.0, math.pi / 2)
    (_v, om) = robot_commands(still, m, [spun], cfg, radius)[0]
    assert om == pytest.approx(-cfg.k_psi * math.pi / 2)


def test_rotation_feedforward(square):
    shape, intr = square
    m = mode_at(shape, intr, [0.875])
    cfg = TrackerConfig()
    dt = cfg.dt
    # pure spin at 1 rad/s: contact at (-0.5, 0) needs tangential speed 0.5 +y-ish
    vel = np.array([0.0, 0.0, 1.0])
    states = _euler_rollout(SE2State(0, 0, 0), [vel] * 3, dt)
    rt = RefinedTrajectory(
        start=SE2State(0, 0, 0),
        states=states,
        velocities=[vel] * 3,
        residuals=[0.0] * 3,
        objective=0.0,
        converged=True,
    )
    radius = 0.08
    robots = [
        SE2State(center[0], center[1], heading)
        for _cpt, center, heading in contact_targets(states[0], m, radius)
    ]
    (v, om) = robot_commands(rt, m, robots, cfg, radius)[0]
    cpt = np.array(contact_targets(states[0], m, radius)[0][0])
    r = cpt - np.array([states[0].x, states[0].y])
    expect = np.array([-r[1], r[0]])
    assert np.allclose(v, expect, atol=1e-12)


def test_local_goal_reaches_farthest_sample(square):
    shape, intr = square
    cfg = TrackerConfig()
    arc = connect_arc(SE2State(0, 0, 0), SE2State(2.0, 0.0, 0.0), 0.5, intr.c)
    samples = sample_arc(arc, 0.05, intr.c)
    cur = SE2State(0, 0, 0)
    goal, cursor = local_goal_on(samples, 0, cur, intr, cfg)
    reach = 0.5 * cfg.horizon_seconds
    assert goal.x == pytest.approx(reach, abs=0.05)
    assert cursor > 0
    # cursor never walks backward even if the pose regresses
    goal2, cursor2 = local_goal_on(samples, cursor, SE2State(-1.0, 0, 0), intr, cfg)
    assert cursor2 >= cursor
    assert goal2.x >= goal.x - 1e-12


def test_monotone_objective_trace(square):
    shape, intr = square
    m = left_edge_mode(square)
    cur = SE2State(0.0, 0.0, 0.0)
    goal = SE2State(0.15, 0.6, 0.0)
    prev = None
    for sweeps in range(0, 16, 3):
        cfg = TrackerConfig(w_smooth=10.0, w_end=100.0, max_sweeps=sweeps)
        rt = refine_trajectory(cur, goal, m, intr, None, cfg)
        if prev is not None:
            assert rt.objective <= prev + 1e-12
        prev = rt.objective
