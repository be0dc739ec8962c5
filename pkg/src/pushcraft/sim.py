"""Quasi-static closed-loop simulator.

Contact resolution follows the planner's own model: commanded robot
velocities are fit to a rigid body twist (least squares over the contact
points), the twist is kept when the active mode allows it and otherwise
projected onto the allowed cone with the along-direction speed preserved.
The full multi-body contact problem is deliberately out of scope.

Episodes loop sense -> track -> switch-when-segment-done -> step and fire
a replan (guiding path + keyframe search from the current state) when the
object deviates from the plan, loses clearance, or stops making progress.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .arcs import roll_arc, sample_arc
from .geometry import (
    Polygon,
    PosedObject,
    SE2State,
    Workspace,
    weighted_distance,
    wrap_angle,
)
from .guidance import LatticeConfig, find_guiding_path, precompute_edge_losses
from .kghs import HybridPlan, SearchConfig, kghs_search
from .modegen import candidate_contacts
from .statics import InteractionMode, ObjectIntrinsics
from .switching import assign_switch, path_waypoints
from .tracking import (
    TrackerConfig,
    contact_targets,
    local_goal_on,
    refine_trajectory,
    robot_commands,
)

SIM_HZ = 240.0
GOAL_TOL = 0.2
SEG_TOL = 0.06
STATION_TOL = 0.01
LOG_SCHEMA = 1


@dataclass(frozen=True)
class Scenario:
    """One pushing task: workspace, object, robot team, start and goal."""

    name: str
    shape: Polygon
    mass: float
    mu_ground: float
    mu_contact: float
    workspace: Workspace
    start: SE2State
    goal: SE2State
    n_robots: int = 2
    robot_radius: float = 0.08
    push_max: float = 6.0
    robot_speed: float = 0.5
    alpha_min: float = 0.1
    w_t: float = 10.0
    weights: tuple = (5.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    xy_step: float = 0.2
    psi_step: float = math.pi / 4
    angle_weight: float | None = None
    max_nodes: int = 20_000
    max_seconds: float = 60.0
    seed: int = 0

    def intrinsics(self) -> ObjectIntrinsics:
        return ObjectIntrinsics.from_polygon(
            self.shape, self.mass, self.mu_ground, self.mu_contact
        )

    def posed(self) -> PosedObject:
        return PosedObject(self.shape)

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            alpha_min=self.alpha_min,
            w_t=self.w_t,
            n_robots=self.n_robots,
            robot_speed=self.robot_speed,
            max_nodes=self.max_nodes,
            max_seconds=self.max_seconds,
            seed=self.seed,
            weights=tuple(self.weights),
        )

    def lattice(self) -> LatticeConfig:
        return LatticeConfig(xy_step=self.xy_step, psi_step=self.psi_step)

    def planning_workspace(self) -> Workspace:
        # Plan with obstacles inflated by the execution clearance margin,
        # otherwise a valid plan can hug a wall closely enough to trip the
        # proximity replan trigger on its own nominal route.
        return self.workspace.with_inflation(self.robot_radius)

    def candidates(self, intr: ObjectIntrinsics | None = None):
        intr = intr or self.intrinsics()
        return candidate_contacts(
            self.shape,
            robot_radius=self.robot_radius,
            push_max=min(self.push_max, 2.0 * intr.f_max),
        )


@dataclass(frozen=True)
class DisturbanceConfig:
    """Body-frame velocity noise, std proportional to the current speed."""

    rate: float = 10.0
    sigma_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rate < 0 or self.sigma_ratio < 0:
            raise ValueError("rate and sigma_ratio must be nonnegative")


@dataclass(frozen=True)
class ReplanConfig:
    deviation_threshold: float = 0.2
    stuck_window: float = 5.0
    clearance_min: float = 0.08
    stuck_tol: float = 0.02
    max_replans: int = 3
    # Replanning does not move the object, so without a cooldown a persistent
    # condition (low clearance above all) re-fires every reference tick and
    # burns the whole replan budget in one spot.
    cooldown: float = 2.0

    def __post_init__(self):
        if min(self.deviation_threshold, self.stuck_window, self.clearance_min) < 0:
            raise ValueError("replan thresholds must be nonnegative")


@dataclass
class SimState:
    object: SE2State
    robots: list
    mode: InteractionMode | None
    cursor: int = 0
    clock: float = 0.0


@dataclass
class StepInfo:
    p_des: np.ndarray
    p_real: np.ndarray
    noise: np.ndarray
    stick: bool
    broken: bool


@dataclass
class ExecutionLog:
    """Per-step records of one episode plus its outcome.

    planning_time is carried in memory for reports but never serialized;
    serialized logs must be reproducible from seeds alone.
    """

    scenario: str
    method: str
    seed: int
    goal: tuple
    angle_weight: float = 0.0
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    success: bool = False
    reason: str = ""
    plan_cost: float = 0.0
    n_switches: int = 0
    sim_seconds: float = 0.0
    planning_time: float = 0.0

    def to_jsonl(self) -> str:
        head = {
            "type": "header",
            "schema_version": LOG_SCHEMA,
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "goal": list(self.goal),
            "angle_weight": self.angle_weight,
            "plan_cost": self.plan_cost,
            "n_switches": self.n_switches,
        }
        tail = {
            "type": "end",
            "success": self.success,
            "reason": self.reason,
            "sim_seconds": self.sim_seconds,
            "events": self.events,
        }
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps(tail, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ExecutionLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        tail = rows[-1]
        if head.get("type") != "header" or tail.get("type") != "end":
            raise ValueError("malformed log: missing header or end record")
        log = cls(
            scenario=head["scenario"],
            method=head["method"],
            seed=head["seed"],
            goal=tuple(head["goal"]),
            angle_weight=head.get("angle_weight", 0.0),
            plan_cost=head["plan_cost"],
            n_switches=head["n_switches"],
        )
        log.records = rows[1:-1]
        log.events = tail["events"]
        log.success = tail["success"]
        log.reason = tail["reason"]
        log.sim_seconds = tail["sim_seconds"]
        return log


def _contact_speed_cap(p: np.ndarray, points, v_cap: float) -> np.ndarray:
    """Scale the twist so no contact point moves faster than v_cap."""
    if v_cap <= 0:
        return np.zeros(3)
    top = 0.0
    for rx, ry in points:
        vx = p[0] - p[2] * ry
        vy = p[1] + p[2] * rx
        top = max(top, math.hypot(vx, vy))
    if top > v_cap and top > 1e-12:
        return p * (v_cap / top)
    return p


def step(
    sim: SimState,
    commands,
    intr: ObjectIntrinsics,
    dt: float,
    noise: np.ndarray | None = None,
    robot_radius: float = 0.0,
    break_tol: float = 0.1,
):
    """One quasi-static step; returns (new SimState, StepInfo).

    commands is a list of (velocity vector, angular rate) per robot, in the
    order of the active mode's contacts. The object sticks when the fitted
    twist is allowed, otherwise slips along the nearest allowed direction
    with its along-direction speed preserved.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    mode = sim.mode
    pose = sim.object
    zero = np.zeros(3)

    if mode is None or not commands:
        p_des = zero
        p_real = zero
        stick = True
    else:
        cs, sn = math.cos(pose.psi), math.sin(pose.psi)
        rows = []
        rhs = []
        pts = []
        for ct, (v, _om) in zip(mode.contacts, commands):
            px, py = ct.point
            rx = cs * px - sn * py
            ry = sn * px + cs * py
            pts.append((rx, ry))
            rows.append([1.0, 0.0, -ry])
            rows.append([0.0, 1.0, rx])
            rhs.append(v[0])
            rhs.append(v[1])
        tw, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
        v_cap = max(math.hypot(v[0], v[1]) for v, _om in commands)
        tw = _contact_speed_cap(tw, pts, v_cap)
        p_des = np.array([cs * tw[0] + sn * tw[1], -sn * tw[0] + cs * tw[1], tw[2]])
        speed_w = intr.weighted_norm(p_des)
        wset = mode.wrench_set(intr)
        if speed_w < 1e-12:
            p_real = zero
            stick = True
        elif wset.allowed(p_des / speed_w):
            p_real = p_des
            stick = True
        else:
            # projections bucketed by rounded direction: the returned
            # direction is allowed regardless of the exact query, only the
            # nearest-direction choice is quantized
            cache = wset.__dict__.setdefault("_slip_cache", {})
            un = p_des / speed_w
            key = (round(un[0], 3), round(un[1], 3), round(un[2], 3))
            if key in cache:
                u = cache[key]
            else:
                u = wset.project_direction(p_des)
                cache[key] = u
            if u is None:
                p_real = zero
            else:
                along = p_des[0] * u[0] + p_des[1] * u[1] + intr.c**2 * p_des[2] * u[2]
                p_real = np.asarray(u) * max(0.0, along)
                p_real = _contact_speed_cap(p_real, pts, v_cap)
            stick = False

    if noise is not None and np.any(noise):
        wspeed = intr.weighted_norm(p_real)
        p_total = p_real + noise * wspeed * np.array([1.0, 1.0, 1.0 / max(intr.c, 1e-9)])
    else:
        p_total = p_real

    new_obj = roll_arc(pose, tuple(p_total), dt) if np.any(p_total) else pose
    new_robots = []
    for (v, om), rs in zip(commands, sim.robots):
        vx, vy = float(v[0]), float(v[1])
        if mode is not None:
            # while pushing, v commands the face point; the center trails it
            # so the face itself moves at v while the heading turns
            vx += om * robot_radius * math.sin(rs.psi)
            vy -= om * robot_radius * math.cos(rs.psi)
        new_robots.append(
            SE2State(rs.x + vx * dt, rs.y + vy * dt, wrap_angle(rs.psi + om * dt))
        )
    new_robots += sim.robots[len(commands):]

    broken = False
    if mode is not None and commands:
        # pushing faces must stay on station; drifting past break_tol means
        # the rigid attachment assumption no longer holds
        for (cpt, _cen, _head), rs in zip(
            contact_targets(new_obj, mode, robot_radius), new_robots
        ):
            fx = rs.x + robot_radius * math.cos(rs.psi)
            fy = rs.y + robot_radius * math.sin(rs.psi)
            if math.hypot(cpt[0] - fx, cpt[1] - fy) > break_tol:
                broken = True
    new = SimState(new_obj, new_robots, mode, sim.cursor, sim.clock + dt)
    info = StepInfo(p_des, np.asarray(p_real), noise if noise is not None else zero, stick, broken)
    return new, info


def _vals(x) -> list:
    return [round(float(v), 9) for v in x]


def _record(sim: SimState, commands, info: StepInfo, target, phase: str, residual: float):
    return {
        "t": round(sim.clock, 9),
        "object": _vals([sim.object.x, sim.object.y, sim.object.psi]),
        "robots": [_vals([r.x, r.y, r.psi]) for r in sim.robots],
        "commands": [_vals([v[0], v[1], om]) for v, om in commands],
        "p_body": _vals(info.p_real),
        "noise": _vals(info.noise),
        "residual": round(float(residual), 9),
        "target": _vals([target.x, target.y, target.psi]) if target else None,
        "phase": phase,
    }


def _stations(pose: SE2State, mode: InteractionMode, radius: float):
    return [
        SE2State(cen[0], cen[1], head)
        for _cpt, cen, head in contact_targets(pose, mode, radius)
    ]


def _mode_params(mode: InteractionMode):
    return [c.param for c in mode.contacts]


def _walk_step(rs: SE2State, waypoints, idx: int, speed: float, dt: float):
    """Advance one robot along its polyline; returns (command, new index)."""
    while idx < len(waypoints):
        tx, ty = waypoints[idx]
        dx, dy = tx - rs.x, ty - rs.y
        d = math.hypot(dx, dy)
        if d > STATION_TOL:
            s = min(speed, d / dt)
            return np.array([dx / d * s, dy / d * s]), idx
        idx += 1
    return np.zeros(2), idx


def run_episode(
    scenario: Scenario,
    plan: HybridPlan,
    tracker_cfg: TrackerConfig | None = None,
    dist_cfg: DisturbanceConfig | None = None,
    replan_cfg: ReplanConfig | None = None,
    loss_table=None,
    method: str = "kghs",
    timeout: float | None = None,
) -> ExecutionLog:
    """Execute a hybrid plan closed-loop; returns the full log.

    The default tracker trims the sweep budget: the optimizer re-solves at
    10 Hz, so deep refinement of any single horizon is wasted effort. Pass
    an explicit tracker_cfg to override.
    """
    tracker_cfg = tracker_cfg or TrackerConfig(max_sweeps=8)
    dist_cfg = dist_cfg or DisturbanceConfig()
    replan_cfg = replan_cfg or ReplanConfig(clearance_min=scenario.robot_radius)
    intr = scenario.intrinsics()
    obj = scenario.posed()
    ws = scenario.workspace
    rng = np.random.default_rng(dist_cfg.seed)
    dt = 1.0 / SIM_HZ
    c = intr.c

    log = ExecutionLog(
        scenario=scenario.name,
        method=method,
        seed=dist_cfg.seed,
        goal=(scenario.goal.x, scenario.goal.y, scenario.goal.psi),
        angle_weight=c,
        plan_cost=plan.assigned_cost,
    )

    segments = plan.segments(c, scenario.robot_speed)
    if timeout is None:
        nominal = sum(seg[3].duration for seg in segments)
        timeout = min(240.0, 3.0 * nominal + 30.0)

    first_mode = segments[0][2]
    sim = SimState(
        object=plan.keyframes[0].state,
        robots=_stations(plan.keyframes[0].state, first_mode, scenario.robot_radius),
        mode=first_mode,
        cursor=0,
    )

    noise = None
    noise_every = (
        max(1, int(round(SIM_HZ / dist_cfg.rate)))
        if dist_cfg.rate > 0 and dist_cfg.sigma_ratio > 0
        else None
    )
    opt_every = max(1, int(round(SIM_HZ / tracker_cfg.optimizer_hz)))
    ref_every = max(1, int(round(SIM_HZ / tracker_cfg.reference_hz)))

    seg_idx = 0
    samples = sample_arc(segments[0][3], scenario.alpha_min / 2, c)
    sample_cursor = 0
    refined = None
    local_goal = None
    prev_p0 = None
    n_replans = 0
    stuck_anchor = (sim.object, 0.0)
    last_replan_t = -math.inf
    k_step = 0
    phase = "push"
    walk = None

    def goal_reached(pose: SE2State) -> bool:
        return math.hypot(pose.x - scenario.goal.x, pose.y - scenario.goal.y) <= GOAL_TOL

    def nearest_refined(pose: SE2State) -> SE2State | None:
        if refined is None:
            return None
        best = min(
            refined.states, key=lambda s: weighted_distance(pose, s, c)
        )
        return best

    def start_walk(next_mode: InteractionMode, boundary: bool):
        """Switch phase: robots leave contact and travel to new stations."""
        nonlocal phase, walk, sim, refined, prev_p0
        stations = _stations(sim.object, next_mode, scenario.robot_radius)
        if boundary and sim.mode is not None and len(sim.mode.contacts) == len(next_mode.contacts):
            assignment = assign_switch(_mode_params(sim.mode), _mode_params(next_mode))
            cs, sn = math.cos(sim.object.psi), math.sin(sim.object.psi)
            paths = []
            heads = []
            for i, bp in enumerate(assignment.paths):
                body = path_waypoints(scenario.shape, bp, scenario.robot_radius)
                paths.append(
                    [
                        (sim.object.x + cs * bx - sn * by, sim.object.y + sn * bx + cs * by)
                        for bx, by in body
                    ]
                )
                heads.append(stations[assignment.permutation[i]].psi)
            log.events.append(
                {"t": round(sim.clock, 9), "kind": "switch",
                 "max_frac": round(assignment.max_path_frac, 9)}
            )
        else:
            # recovery walk: straight to station, contact order
            paths = [[(st.x, st.y)] for st in stations]
            heads = [st.psi for st in stations]
            log.events.append({"t": round(sim.clock, 9), "kind": "restation"})
        walk = {"mode": next_mode, "paths": paths, "idx": [0] * len(paths), "heads": heads}
        sim = SimState(sim.object, sim.robots, None, sim.cursor, sim.clock)
        phase = "switch"
        refined = None
        prev_p0 = None

    def replan(reason: str) -> bool:
        nonlocal segments, seg_idx, samples, sample_cursor, refined, local_goal
        nonlocal loss_table, n_replans, stuck_anchor, prev_p0, sim
        if n_replans >= replan_cfg.max_replans:
            return False
        n_replans += 1
        log.events.append({"t": round(sim.clock, 9), "kind": "replan", "reason": reason})
        if loss_table is None:
            loss_table = precompute_edge_losses(
                scenario.lattice(),
                intr,
                scenario.candidates(intr),
                n_robots=scenario.n_robots,
                weights=tuple(scenario.weights),
            )
        new_plan = None
        # The margin-inflated workspace keeps replans off the walls, but the
        # trigger often fires with the object already inside that margin, so
        # fall back to the raw workspace rather than give up.
        for ws_plan in (scenario.planning_workspace(), ws):
            try:
                path = find_guiding_path(
                    sim.object, scenario.goal, ws_plan, obj, scenario.lattice(),
                    loss_table, scenario.angle_weight or c,
                )
                new_plan = kghs_search(
                    path.states, scenario.search_config(), intr, ws_plan,
                    scenario.candidates(intr), obj=obj,
                )
                break
            except Exception as exc:  # noqa: BLE001
                last_err = exc
        if new_plan is None:
            log.events.append(
                {"t": round(sim.clock, 9), "kind": "replan_failed", "reason": str(last_err)}
            )
            return False
        segments = new_plan.segments(c, scenario.robot_speed)
        seg_idx = 0
        samples = sample_arc(segments[0][3], scenario.alpha_min / 2, c)
        sample_cursor = 0
        refined = None
        local_goal = None
        prev_p0 = None
        stuck_anchor = (sim.object, sim.clock)
        new_mode = segments[0][2]
        if sim.mode is None or _mode_params(new_mode) != _mode_params(sim.mode):
            start_walk(new_mode, boundary=False)
        else:
            sim = SimState(sim.object, sim.robots, new_mode, 0, sim.clock)
        return True

    while sim.clock < timeout:
        if goal_reached(sim.object):
            log.success = True
            log.reason = "goal"
            break

        if phase == "switch":
            cmds = []
            done = True
            for i, rs in enumerate(sim.robots):
                v, idx2 = _walk_step(rs, walk["paths"][i], walk["idx"][i], scenario.robot_speed, dt)
                walk["idx"][i] = idx2
                om = 0.0
                if idx2 >= len(walk["paths"][i]):
                    err = wrap_angle(walk["heads"][i] - rs.psi)
                    om = max(-2.0 * math.pi, min(2.0 * math.pi, 4.0 * err))
                    done = done and abs(err) < 1e-3
                else:
                    done = False
                cmds.append((v, om))
            sim, info = step(sim, cmds, intr, dt, robot_radius=scenario.robot_radius)
            log.records.append(_record(sim, cmds, info, None, "switch", 0.0))
            k_step += 1
            if done:
                sim = SimState(
                    sim.object,
                    _stations(sim.object, walk["mode"], scenario.robot_radius),
                    walk["mode"],
                    sim.cursor,
                    sim.clock,
                )
                phase = "push"
                stuck_anchor = (sim.object, sim.clock)
            continue

        s_from, s_to, mode, arc = segments[seg_idx]

        if weighted_distance(sim.object, s_to, c) <= SEG_TOL:
            if seg_idx + 1 >= len(segments):
                if goal_reached(sim.object):
                    log.success = True
                    log.reason = "goal"
                    break
                if not replan("plan exhausted short of goal"):
                    log.reason = "plan exhausted short of goal"
                    break
                continue
            seg_idx += 1
            samples = sample_arc(segments[seg_idx][3], scenario.alpha_min / 2, c)
            sample_cursor = 0
            next_mode = segments[seg_idx][2]
            if _mode_params(next_mode) != _mode_params(mode):
                start_walk(next_mode, boundary=True)
            else:
                refined = None
                prev_p0 = None
            continue

        if k_step % ref_every == 0 or local_goal is None:
            local_goal, sample_cursor = local_goal_on(
                samples, sample_cursor, sim.object, intr, tracker_cfg,
                nominal_speed=scenario.robot_speed,
            )
            dev = min(weighted_distance(sim.object, s, c) for s in samples)
            clear = obj.clearance(sim.object, ws)
            anchor_pose, anchor_t = stuck_anchor
            if weighted_distance(sim.object, anchor_pose, c) > replan_cfg.stuck_tol:
                stuck_anchor = (sim.object, sim.clock)
                anchor_t = sim.clock
            trigger = None
            if sim.clock - last_replan_t >= replan_cfg.cooldown:
                if dev > replan_cfg.deviation_threshold:
                    trigger = "deviation"
                elif clear < replan_cfg.clearance_min:
                    trigger = "clearance"
                elif sim.clock - anchor_t > replan_cfg.stuck_window:
                    trigger = "stuck"
            if trigger:
                if not replan(trigger):
                    log.reason = f"replan failed after {trigger}"
                    break
                last_replan_t = sim.clock
                continue

        if k_step % opt_every == 0 or refined is None:
            refined = refine_trajectory(
                sim.object, local_goal, mode, intr, ws, tracker_cfg,
                obj=obj, prev_velocity=prev_p0,
            )
            prev_p0 = refined.velocities[0]

        cmds = robot_commands(refined, mode, sim.robots, tracker_cfg, scenario.robot_radius)

        if noise_every and k_step % noise_every == 0:
            noise = rng.normal(0.0, dist_cfg.sigma_ratio, size=3)
        sim, info = step(
            sim, cmds, intr, dt,
            noise=noise if noise_every else None,
            robot_radius=scenario.robot_radius,
        )
        log.records.append(
            _record(sim, cmds, info, nearest_refined(sim.object), "push",
                    sum(refined.residuals))
        )
        k_step += 1
        if info.broken:
            log.events.append({"t": round(sim.clock, 9), "kind": "contact_broken"})
            start_walk(mode, boundary=False)

    if not log.success and not log.reason:
        log.reason = "timeout"
    log.n_switches = sum(1 for e in log.events if e["kind"] == "switch")
    log.sim_seconds = sim.clock
    return log


def metrics(log: ExecutionLog) -> dict:
    """Episode metrics; CC is the integrated squared command speed."""
    dt = 1.0 / SIM_HZ
    cw = log.angle_weight
    te_sum = 0.0
    te_n = 0
    cc = 0.0
    sm_sum = 0.0
    sm_n = 0
    prev_p = None
    for rec in log.records:
        for cmd in rec["commands"]:
            cc += (cmd[0] ** 2 + cmd[1] ** 2) * dt
        if rec["phase"] != "push":
            prev_p = None
            continue
        if rec["target"] is not None:
            ox, oy, opsi = rec["object"]
            tx, ty, tpsi = rec["target"]
            te_sum += math.hypot(ox - tx, oy - ty) + cw * abs(wrap_angle(opsi - tpsi))
            te_n += 1
        p = rec["p_body"]
        if prev_p is not None:
            d0, d1, d2 = p[0] - prev_p[0], p[1] - prev_p[1], p[2] - prev_p[2]
            sm_sum += math.hypot(d0, d1, cw * d2)
            sm_n += 1
        prev_p = p
    if log.records:
        ex, ey, epsi = log.records[-1]["object"]
    else:
        ex, ey, epsi = log.goal
    ee = math.hypot(ex - log.goal[0], ey - log.goal[1]) + cw * abs(
        wrap_angle(epsi - log.goal[2])
    )
    return {
        "SR": 1.0 if log.success else 0.0,
        "TE": te_sum / te_n if te_n else 0.0,
        "CC": cc,
        "SM": sm_sum / sm_n if sm_n else 0.0,
        "PT": log.planning_time,
        "ET": log.sim_seconds,
        "EE": ee,
    }
