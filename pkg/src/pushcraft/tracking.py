"""Receding-horizon refinement of the active plan segment plus P-control.

The object should follow the current arc while its pushing forces stay
balanceable inside the active mode. Over a short horizon the body-velocity
profile is re-solved: per-step force-balance residuals (each an LP once the
velocity direction is frozen) plus a quadratic smoothness penalty, subject
to the discrete kinematics s(t+1) = s(t) + R(psi_t) p(t) dt and fixed
endpoints. The only nonconvexity is the direction dependence of the ground
friction wrench, so the solver alternates: solve the balance LPs, nudge each
step's velocity toward the direction its achievable wrench can sustain, then
re-close the endpoint. A sweep that fails to decrease the objective is
retried with a halved nudge, which keeps the objective nonincreasing.

Robot commands are plain proportional laws on the desired contact points of
the first refined state, plus the rigid-attachment feedforward velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arcs import connect_arc
from .geometry import PosedObject, SE2State, Workspace, wrap_angle
from .statics import (
    TOL_LP,
    InteractionMode,
    ObjectIntrinsics,
    feasibility_project,
)

RESIDUAL_STOP = 1e-6


@dataclass(frozen=True)
class TrackerConfig:
    """Horizon, weights, and control gains of the segment tracker."""

    horizon_steps: int = 20
    dt: float = 0.1
    w_smooth: float = 1e4
    k_v: float = 2.0
    k_psi: float = 2.0
    optimizer_hz: float = 10.0
    reference_hz: float = 1.0
    v_max: float = 1.0
    omega_max: float = 2.0 * math.pi
    max_sweeps: int = 20
    w_end: float = 2e3
    obstacle_margin: float = 0.05
    w_obstacle: float = 100.0

    def __post_init__(self):
        if self.horizon_steps < 2:
            raise ValueError("horizon needs at least two steps")
        if min(self.dt, self.k_v, self.k_psi) <= 0:
            raise ValueError("step size and gains must be positive")
        if min(self.optimizer_hz, self.reference_hz) <= 0:
            raise ValueError("update rates must be positive")

    @property
    def horizon_seconds(self) -> float:
        return self.horizon_steps * self.dt


@dataclass
class RefinedTrajectory:
    """Velocity profile and the states it integrates to.

    states[t] is reached from states[t-1] (states[0] from start) by holding
    body velocity velocities[t] for dt under the Euler rule
    s' = s + R(psi) (vx, vy) dt, psi' = psi + omega dt.
    """

    start: SE2State
    states: list[SE2State]
    velocities: list[np.ndarray]
    residuals: list[float]
    objective: float
    converged: bool
    sweeps: int = 0

    @property
    def total_residual(self) -> float:
        return float(sum(self.residuals))


def _euler_rollout(start: SE2State, vels, dt: float) -> list[SE2State]:
    states = []
    x, y, psi = start.x, start.y, start.psi
    for p in vels:
        cs, sn = math.cos(psi), math.sin(psi)
        x += (cs * p[0] - sn * p[1]) * dt
        y += (sn * p[0] + cs * p[1]) * dt
        psi += p[2] * dt
        states.append(SE2State(x, y, wrap_angle(psi)))
    return states


def _close_endpoint(start: SE2State, vels, goal: SE2State, dt: float):
    """Spread the endpoint gap uniformly over the steps, in each body frame."""
    T = len(vels)
    for _ in range(12):
        states = _euler_rollout(start, vels, dt)
        end = states[-1]
        gx, gy = goal.x - end.x, goal.y - end.y
        gpsi = wrap_angle(goal.psi - end.psi)
        if math.hypot(gx, gy) < 1e-13 and abs(gpsi) < 1e-13:
            return vels, states
        chain = [start] + states[:-1]
        for t in range(T):
            psi = chain[t].psi
            cs, sn = math.cos(psi), math.sin(psi)
            vels[t] = vels[t] + np.array(
                [(cs * gx + sn * gy) / (T * dt), (-sn * gx + cs * gy) / (T * dt), gpsi / (T * dt)]
            )
    return vels, _euler_rollout(start, vels, dt)


def _consistent_direction(q: np.ndarray, c: float) -> np.ndarray | None:
    """Velocity direction whose friction wrench the wrench q can cancel."""
    u = np.array([q[0], q[1], q[2] / (c * c)])
    n = math.hypot(u[0], u[1], c * u[2])
    if n < 1e-12:
        return None
    return u / n


def refine_trajectory(
    current: SE2State,
    local_goal: SE2State,
    mode: InteractionMode,
    intr: ObjectIntrinsics,
    ws: Workspace | None,
    cfg: TrackerConfig,
    obj: PosedObject | None = None,
    prev_velocity=None,
) -> RefinedTrajectory:
    """Refined horizon trajectory from current to local_goal under the mode.

    Obstacle clearance enters as a soft penalty on the rolled-out states when
    both ws and obj are given; prev_velocity anchors the first smoothness
    term across receding re-solves. Returns converged=False when the endpoint
    cannot be met or the sweep budget runs out before the objective settles.
    """
    T = cfg.horizon_steps
    dt = cfg.dt
    c = intr.c

    def wnorm(p) -> float:
        return math.hypot(p[0], p[1], c * p[2])

    gap0 = math.hypot(local_goal.x - current.x, local_goal.y - current.y) + c * abs(
        wrap_angle(local_goal.psi - current.psi)
    )
    if gap0 < 1e-12:
        zero = np.zeros(3)
        return RefinedTrajectory(
            start=current,
            states=[current] * T,
            velocities=[zero.copy() for _ in range(T)],
            residuals=[0.0] * T,
            objective=0.0,
            converged=True,
        )

    arc = connect_arc(current, local_goal, 1.0, c)
    base = np.array(arc.p_body) * (arc.duration / (T * dt))
    anchor = base if prev_velocity is None else np.asarray(prev_velocity, dtype=float)
    vels = [base.copy() for _ in range(T)]
    vels, states = _close_endpoint(current, vels, local_goal, dt)

    hull = mode.wrench_set(intr)
    # residual and consistent direction depend on the direction alone, so
    # the cache lives on the mode's wrench set and survives across calls
    proj_cache: dict = hull.__dict__.setdefault("_residual_cache", {})

    def project(p):
        speed = wnorm(p)
        if speed < 1e-12:
            return 0.0, None
        u = p / speed
        key = (round(u[0], 3), round(u[1], 3), round(u[2], 3))
        if key not in proj_cache:
            if hull.allowed(u):
                proj_cache[key] = (0.0, None)
            else:
                r, q, _ = feasibility_project(intr, mode, u)
                proj_cache[key] = (r, _consistent_direction(q, c))
        return proj_cache[key]

    def end_gap_of(states):
        end = states[-1]
        return math.hypot(local_goal.x - end.x, local_goal.y - end.y) + c * abs(
            wrap_angle(local_goal.psi - end.psi)
        )

    def objective_of(vels, states):
        res = [project(p)[0] for p in vels]
        obj_val = sum(res)
        for a, b in zip([anchor] + vels[:-1], vels):
            d = b - a
            obj_val += cfg.w_smooth * (d[0] ** 2 + d[1] ** 2 + (c * d[2]) ** 2)
        obj_val += cfg.w_end * end_gap_of(states) ** 2
        if ws is not None and obj is not None:
            for s in states:
                pen = cfg.obstacle_margin - obj.clearance(s, ws)
                if pen > 0.0:
                    obj_val += cfg.w_obstacle * pen * pen
        return obj_val, res

    best_obj, best_res = objective_of(vels, states)
    best_vels, best_states = vels, states

    lam = 0.5
    sweeps = 0
    # an all-allowed profile is a fixpoint of the nudge below
    settled = all(r <= TOL_LP for r in best_res)
    while not settled and sweeps < cfg.max_sweeps:
        sweeps += 1
        # damped blend of each step toward its force-consistent direction;
        # scored both raw (endpoint drifts toward the allowed cone, paying
        # the endpoint penalty) and with the endpoint repaired exactly
        nudged = []
        for p in best_vels:
            speed = wnorm(p)
            r, u_ok = project(p)
            if r <= TOL_LP or u_ok is None or speed < 1e-12:
                nudged.append(p.copy())
                continue
            blend = (1.0 - lam) * (p / speed) + lam * u_ok
            bn = wnorm(blend)
            if bn < 1e-12:
                nudged.append(p.copy())
                continue
            nudged.append(blend * (speed / bn))
        raw_states = _euler_rollout(current, nudged, dt)
        candidates = [(nudged, raw_states)]
        candidates.append(_close_endpoint(current, [p.copy() for p in nudged], local_goal, dt))
        picked = None
        for tvels, tstates in candidates:
            tobj, tres = objective_of(tvels, tstates)
            if picked is None or tobj < picked[0]:
                picked = (tobj, tres, tvels, tstates)
        if picked[0] < best_obj - 1e-12:
            drop = best_obj - picked[0]
            best_obj, best_res, best_vels, best_states = picked
            if drop < RESIDUAL_STOP:
                settled = True
        else:
            lam *= 0.5
            if lam < 1e-3:
                settled = True

    end_gap = end_gap_of(best_states)
    return RefinedTrajectory(
        start=current,
        states=best_states,
        velocities=best_vels,
        residuals=best_res,
        objective=best_obj,
        converged=settled and end_gap <= 1e-9,
        sweeps=sweeps,
    )


def contact_targets(state: SE2State, mode: InteractionMode, robot_radius: float):
    """Per-contact (world contact point, world center, heading) at a pose.

    The robot's pushing face touches the contact point, so its center sits
    one radius outward along the world push normal; its heading is the push
    direction.
    """
    cs, sn = math.cos(state.psi), math.sin(state.psi)
    out = []
    for ct in mode.contacts:
        px, py = ct.point
        nx, ny = ct.normal
        wx = state.x + cs * px - sn * py
        wy = state.y + sn * px + cs * py
        wnx, wny = cs * nx - sn * ny, sn * nx + cs * ny
        center = (wx - robot_radius * wnx, wy - robot_radius * wny)
        out.append(((wx, wy), center, math.atan2(wny, wnx)))
    return out


def robot_commands(
    refined: RefinedTrajectory,
    mode: InteractionMode,
    robot_states,
    cfg: TrackerConfig,
    robot_radius: float,
):
    """Per-robot (face velocity vector, heading rate) toward the first refined state.

    The velocity command is for the pushing face, not the disc center:
    proportional on the face-to-contact error plus the rigid-attachment
    feedforward (object velocity carried to the contact point).  The heading
    rate feeds the object's rotation forward, otherwise pure proportional
    heading lags a turning contact normal by omega / k_psi and the face
    swings off station.  When any robot would exceed the speed limit the
    whole set is scaled down by one common factor: per-robot clipping would
    distort the commanded twist and pry the slower contact off its face.
    """
    target = refined.states[0]
    p0 = refined.velocities[0]
    cs, sn = math.cos(target.psi), math.sin(target.psi)
    v_obj = np.array([cs * p0[0] - sn * p0[1], sn * p0[0] + cs * p0[1]])
    om_obj = float(p0[2])
    targets = contact_targets(target, mode, robot_radius)
    cmds = []
    top = 0.0
    for (cpt, _center, psi_hat), rs in zip(targets, robot_states):
        face = (
            rs.x + robot_radius * math.cos(rs.psi),
            rs.y + robot_radius * math.sin(rs.psi),
        )
        r = np.array([cpt[0] - target.x, cpt[1] - target.y])
        feed = v_obj + om_obj * np.array([-r[1], r[0]])
        v = cfg.k_v * np.array([cpt[0] - face[0], cpt[1] - face[1]]) + feed
        top = max(top, float(np.hypot(v[0], v[1])))
        om = om_obj + cfg.k_psi * wrap_angle(psi_hat - rs.psi)
        om = max(-cfg.omega_max, min(cfg.omega_max, om))
        cmds.append((v, om))
    if top > cfg.v_max:
        cmds = [(v * (cfg.v_max / top), om) for v, om in cmds]
    return cmds


def local_goal_on(
    samples,
    cursor: int,
    current: SE2State,
    intr: ObjectIntrinsics,
    cfg: TrackerConfig,
    nominal_speed: float = 0.5,
):
    """(goal state, new cursor): farthest sample ahead within reach.

    Reach is nominal_speed * horizon in generalized distance from the current
    pose; the cursor is never moved backward. A goal too near the current
    pose causes drastic velocity changes, hence farthest-within-reach.
    """
    c = intr.c
    reach = nominal_speed * cfg.horizon_seconds
    best = cursor
    for i in range(cursor, len(samples)):
        s = samples[i]
        d = math.hypot(s.x - current.x, s.y - current.y) + c * abs(
            wrap_angle(s.psi - current.psi)
        )
        if d <= reach:
            best = i
        elif i > cursor:
            break
    return samples[best], best
