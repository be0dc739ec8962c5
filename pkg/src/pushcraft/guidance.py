"""Lattice search for a collision-free, pushing-aware guiding path.

States live on an SE(2) lattice: positions on a square grid anchored at the
start, headings at fixed multiples of the angular step. Each edge is the
unique arc between its endpoints and costs its weighted length plus the
pushing loss of the best generated mode for that arc. Losses depend only on
the body-relative motion, so they are precomputed once per object into a
small table and reused for every query.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .arcs import NOMINAL_SPEED, connect_arc, sample_arc
from .geometry import PosedObject, SE2State, Workspace, weighted_distance, wrap_angle
from .modegen import ContactCandidateSet, mg_so
from .statics import ObjectIntrinsics, feasibility

# 8-connected translations, each with a heading change of -1/0/+1 steps,
# plus two in-place rotations
DEFAULT_TEMPLATE = tuple(
    (dx, dy, dk)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dk in (-1, 0, 1)
    if (dx, dy) != (0, 0)
) + ((0, 0, -1), (0, 0, 1))


@dataclass(frozen=True)
class LatticeConfig:
    xy_step: float = 0.2
    psi_step: float = math.pi / 12
    template: tuple[tuple[int, int, int], ...] = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.xy_step <= 0 or self.psi_step <= 0:
            raise ValueError("lattice steps must be positive")
        n = 2.0 * math.pi / self.psi_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("psi_step must divide a full turn")

    @property
    def n_headings(self) -> int:
        return round(2.0 * math.pi / self.psi_step)


@dataclass
class GuidingPath:
    states: list[SE2State]
    edge_costs: list[float]
    edge_losses: list[float]

    @property
    def total_cost(self) -> float:
        return float(sum(self.edge_costs))

    def length(self, angle_weight: float) -> float:
        return float(
            sum(weighted_distance(a, b, angle_weight) for a, b in zip(self.states, self.states[1:]))
        )


class NoGuidingPathError(RuntimeError):
    pass


def _fast_loss(intr: ObjectIntrinsics, modes, p_main, weights) -> float:
    """min over modes of the weighted six-probe residual, hull shortcut."""
    from .statics import direction_set

    dirs = direction_set(p_main, intr)
    best = math.inf
    for mode in modes:
        ws = mode.wrench_set(intr)
        total = 0.0
        for d, w in zip(dirs, weights):
            if w == 0.0:
                continue
            if ws.allowed(d):
                continue
            total += w * feasibility(intr, mode, d)
            if total >= best:
                break
        best = min(best, total)
        if best == 0.0:
            break
    return best


def precompute_edge_losses(
    lattice: LatticeConfig,
    intr: ObjectIntrinsics,
    candidates: ContactCandidateSet,
    n_robots: int = 2,
    seed: int = 0,
    weights=None,
) -> dict[tuple, float]:
    """Pushing loss per body-relative motion class.

    Keys: (rel_idx, diag, dk) for translations, where rel_idx indexes the
    displacement direction relative to the heading in psi_step units; and
    (None, 0, dk) for in-place rotations. The arc between two lattice poses
    depends only on this class, so one table serves every query.
    """
    from .statics import DEFAULT_DIRECTION_WEIGHTS

    h = lattice.xy_step
    n_head = lattice.n_headings
    if weights is None:
        weights = DEFAULT_DIRECTION_WEIGHTS
    losses: dict[tuple, float] = {}
    for rel_idx in range(n_head):
        ang = rel_idx * lattice.psi_step
        for diag in (False, True):
            L = h * math.sqrt(2.0) if diag else h
            end_xy = (L * math.cos(ang), L * math.sin(ang))
            for dk in (-1, 0, 1):
                arc = connect_arc(
                    SE2State(0.0, 0.0, 0.0),
                    SE2State(end_xy[0], end_xy[1], dk * lattice.psi_step),
                    NOMINAL_SPEED,
                    intr.c,
                )
                p = np.array(arc.p_body)
                gen = mg_so(intr, candidates, p, n_robots, weights=weights, seed=seed)
                losses[(rel_idx, diag, dk)] = _fast_loss(intr, gen.modes, p, weights)
    for dk in (-1, 1):
        arc = connect_arc(
            SE2State(0.0, 0.0, 0.0),
            SE2State(0.0, 0.0, dk * lattice.psi_step),
            NOMINAL_SPEED,
            intr.c,
        )
        p = np.array(arc.p_body)
        gen = mg_so(intr, candidates, p, n_robots, weights=weights, seed=seed)
        losses[(None, 0, dk)] = _fast_loss(intr, gen.modes, p, weights)
    return losses


def _motion_loss_key(dx: int, dy: int, dk: int, k: int, lattice: LatticeConfig):
    if dx == 0 and dy == 0:
        return (None, 0, dk)
    ang_idx = round(math.atan2(dy, dx) / lattice.psi_step)
    rel_idx = (ang_idx - k) % lattice.n_headings
    return (rel_idx, dx != 0 and dy != 0, dk)


def _nearest_loss(loss_table, lattice: LatticeConfig, frm: SE2State, to: SE2State) -> float:
    """Loss of the closest motion class, for off-lattice stitch edges."""
    dx, dy = to.x - frm.x, to.y - frm.y
    dpsi = wrap_angle(to.psi - frm.psi)
    dk = max(-1, min(1, round(dpsi / lattice.psi_step)))
    if math.hypot(dx, dy) < 1e-9:
        if dk == 0:
            return 0.0
        return loss_table[(None, 0, dk)]
    rel = wrap_angle(math.atan2(dy, dx) - frm.psi)
    rel_idx = round(rel / lattice.psi_step) % lattice.n_headings
    diag = math.hypot(dx, dy) > 1.2 * lattice.xy_step
    return loss_table[(rel_idx, diag, dk)]


def find_guiding_path(
    start: SE2State,
    goal: SE2State,
    ws: Workspace,
    obj: PosedObject,
    lattice: LatticeConfig,
    loss_table: dict[tuple, float],
    angle_weight: float,
    max_nodes: int = 200_000,
    heuristic_scale: float = 1.0,
) -> GuidingPath:
    """A* over the lattice with edge cost = weighted length + pushing loss.

    The lattice grid is anchored at the start position with headings at
    absolute multiples of psi_step; the exact start and goal are joined by
    short stitch edges. The heuristic is the weighted Euclidean distance to
    the goal, a lower bound on any remaining edge cost sum; heuristic_scale=0
    degrades the search to uniform-cost (Dijkstra) order.
    """
    h = lattice.xy_step
    n_head = lattice.n_headings
    check_step = h / 4.0  # swept samples at half the clearance scale

    if obj.collides(start, ws):
        raise NoGuidingPathError("start pose collides")
    if obj.collides(goal, ws):
        raise NoGuidingPathError("goal pose collides")

    def node_state(ix: int, iy: int, k: int) -> SE2State:
        return SE2State(start.x + ix * h, start.y + iy * h, wrap_angle(k * lattice.psi_step))

    pose_free: dict[tuple, bool] = {}

    def node_free(key) -> bool:
        hit = pose_free.get(key)
        if hit is None:
            hit = not obj.collides(node_state(*key), ws)
            pose_free[key] = hit
        return hit

    def arc_free(s0: SE2State, s1: SE2State) -> bool:
        arc = connect_arc(s0, s1, NOMINAL_SPEED, angle_weight)
        for s in sample_arc(arc, check_step, angle_weight):
            if obj.collides(s, ws):
                return False
        return True

    k0 = round(start.psi / lattice.psi_step) % n_head
    start_key = (0, 0, k0)
    entry = node_state(*start_key)
    if not node_free(start_key) or not arc_free(start, entry):
        raise NoGuidingPathError("start cannot join the lattice")
    entry_cost = weighted_distance(start, entry, angle_weight) + _nearest_loss(
        loss_table, lattice, start, entry
    )

    def goal_stitch(state: SE2State):
        if math.hypot(state.x - goal.x, state.y - goal.y) > 1.5 * h + 1e-9:
            return None
        if abs(wrap_angle(state.psi - goal.psi)) > lattice.psi_step + 1e-9:
            return None
        if not arc_free(state, goal):
            return None
        return weighted_distance(state, goal, angle_weight) + _nearest_loss(
            loss_table, lattice, state, goal
        )

    counter = itertools.count()
    g: dict[tuple, float] = {start_key: entry_cost}
    parent: dict[tuple, tuple | None] = {start_key: None}
    h0 = heuristic_scale * weighted_distance(entry, goal, angle_weight)
    open_heap = [(entry_cost + h0, next(counter), start_key)]
    closed: set[tuple] = set()
    goal_from: tuple | None = None
    goal_g = math.inf
    popped = 0

    while open_heap:
        f, _, key = heapq.heappop(open_heap)
        if key in closed:
            continue
        if f >= goal_g:
            break  # stitch cost dominates the heuristic, nothing can improve
        closed.add(key)
        popped += 1
        if popped > max_nodes:
            raise NoGuidingPathError("node budget exhausted")
        state = node_state(*key)
        stitch = goal_stitch(state)
        if stitch is not None and g[key] + stitch < goal_g:
            goal_g = g[key] + stitch
            goal_from = key
        ix, iy, k = key
        for dx, dy, dk in lattice.template:
            nkey = (ix + dx, iy + dy, (k + dk) % n_head)
            if nkey in closed or not node_free(nkey):
                continue
            nstate = node_state(*nkey)
            loss = loss_table[_motion_loss_key(dx, dy, dk, k, lattice)]
            cost = weighted_distance(state, nstate, angle_weight) + loss
            ng = g[key] + cost
            if ng >= g.get(nkey, math.inf):
                continue
            if not arc_free(state, nstate):
                continue
            g[nkey] = ng
            parent[nkey] = key
            heapq.heappush(
                open_heap,
                (
                    ng + heuristic_scale * weighted_distance(nstate, goal, angle_weight),
                    next(counter),
                    nkey,
                ),
            )

    if goal_from is None:
        raise NoGuidingPathError("no guiding path")

    keys = [goal_from]
    while parent[keys[-1]] is not None:
        keys.append(parent[keys[-1]])
    keys.reverse()
    states = [start] + [node_state(*k) for k in keys] + [goal]
    # collapse duplicate stitch endpoints (start already on lattice, etc.)
    dedup = [states[0]]
    for s in states[1:]:
        if weighted_distance(dedup[-1], s, angle_weight) > 1e-12:
            dedup.append(s)
    states = dedup
    edge_costs, edge_losses = [], []
    for a, b in zip(states, states[1:]):
        loss = _nearest_loss(loss_table, lattice, a, b)
        edge_losses.append(loss)
        edge_costs.append(weighted_distance(a, b, angle_weight) + loss)
    return GuidingPath(states, edge_costs, edge_losses)
