"""Best-first decomposition of a guiding path into mode-assigned arc segments.

Each search node is a hybrid plan: keyframe states along (or near) the
guiding path, where every keyframe owns the arc to its successor and either
carries an interaction mode or is still unassigned. Expanding a node touches
its first unassigned segment: a colliding arc is split at a guide state
chosen by clearance, a collision-free arc receives one child per generated
mode, and a segment no generated mode allows is bridged by a chain of
witnessed arcs. Cost combines per-segment pushing losses with weighted
mode-switch times; unassigned segments are estimated by bare generalized
length, so the search is anytime best-first rather than optimal.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .arcs import NOMINAL_SPEED, ArcTransition, connect_arc, roll_arc, sample_arc
from .geometry import PosedObject, SE2State, Workspace, weighted_distance
from .modegen import (
    ContactCandidateSet,
    InsufficientModesError,
    check_sufficient,
    mg_so,
    sata,
)
from .statics import (
    DEFAULT_DIRECTION_WEIGHTS,
    InteractionMode,
    ObjectIntrinsics,
    velocity_allowed,
)
from .switching import switch_time
from .arcs import arc_loss

MERGE_TOL = 1e-6  # states closer than this collapse into one keyframe


@dataclass(frozen=True)
class Keyframe:
    """Plan state plus the mode pushing the arc to the next keyframe."""

    state: SE2State
    mode: InteractionMode | None = None


@dataclass(frozen=True)
class SearchConfig:
    alpha_min: float = 0.1
    w_t: float = 10.0
    n_perturb: int = 4
    n_modes: int = 5
    e_sata: float = 0.05
    max_nodes: int = 20_000
    max_seconds: float = 60.0
    n_robots: int = 2
    robot_speed: float = 0.5
    seed: int = 0
    weights: tuple = DEFAULT_DIRECTION_WEIGHTS

    def __post_init__(self):
        if min(self.alpha_min, self.w_t, self.e_sata, self.max_seconds) <= 0:
            raise ValueError("config values must be positive")
        if min(self.n_modes, self.max_nodes, self.n_robots) <= 0:
            raise ValueError("config counts must be positive")


@dataclass
class HybridPlan:
    keyframes: tuple[Keyframe, ...]
    assigned_cost: float
    heuristic: float

    @property
    def total_cost(self) -> float:
        return self.assigned_cost + self.heuristic

    @property
    def fully_assigned(self) -> bool:
        return all(kf.mode is not None for kf in self.keyframes[:-1])

    def segments(self, c: float, speed: float = NOMINAL_SPEED):
        """(state_from, state_to, mode, arc) per keyframe transition."""
        out = []
        for a, b in zip(self.keyframes, self.keyframes[1:]):
            out.append((a.state, b.state, a.mode, connect_arc(a.state, b.state, speed, c)))
        return out

    @property
    def n_switches(self) -> int:
        def params(m):
            return sorted(c.param for c in m.contacts)

        n = 0
        for a, b in zip(self.keyframes[:-1], self.keyframes[1:-1]):
            if a.mode is None or b.mode is None:
                continue
            if a.mode is not b.mode and params(a.mode) != params(b.mode):
                n += 1
        return n


@dataclass
class SearchStats:
    expansions: int = 0
    enqueued: int = 0
    incumbent_costs: list[float] = field(default_factory=list)
    elapsed: float = 0.0


class NoFeasiblePlanError(RuntimeError):
    pass


def _densify(states, c: float, spacing: float):
    """Sample the guiding path finely; returns (states, cumulative lengths)."""
    dense = [states[0]]
    cum = [0.0]
    for a, b in zip(states, states[1:]):
        arc = connect_arc(a, b, NOMINAL_SPEED, c)
        pts = sample_arc(arc, spacing, c)
        for s in pts[1:]:
            step = weighted_distance(dense[-1], s, c)
            if step < 1e-12:
                continue
            dense.append(s)
            cum.append(cum[-1] + step)
    return dense, cum


def select_split(
    samples,
    cum,
    i_lo: int,
    i_hi: int,
    s_a: SE2State,
    s_b: SE2State,
    ws: Workspace,
    obj: PosedObject,
    intr: ObjectIntrinsics,
    cfg: SearchConfig,
) -> int | None:
    """Guide index splitting the segment between s_a and s_b.

    Interior candidates must leave both halves on the same side of alpha_min
    (uneven splits are rejected); the survivor with the largest minimum
    clearance along its two induced arcs wins, ties going to the candidate
    nearest the arclength midpoint. Returns None when no interior guide
    state exists.
    """
    if i_hi - i_lo < 2:
        return None
    interior = list(range(i_lo + 1, i_hi))
    a = cfg.alpha_min
    passing = []
    for i in interior:
        d1 = weighted_distance(samples[i], s_a, intr.c)
        d2 = weighted_distance(samples[i], s_b, intr.c)
        if (d1 - a) * (d2 - a) > 0:
            passing.append(i)
    if not passing:
        passing = interior
    if len(passing) > 25:
        idx = np.linspace(0, len(passing) - 1, 25).round().astype(int)
        passing = [passing[k] for k in sorted(set(idx.tolist()))]

    mid_len = 0.5 * (cum[i_lo] + cum[i_hi])

    def arc_clearance(sa, sb):
        arc = connect_arc(sa, sb, NOMINAL_SPEED, intr.c)
        lo = math.inf
        for s in sample_arc(arc, cfg.alpha_min, intr.c):
            lo = min(lo, obj.clearance(s, ws))
            if lo <= 0.0:
                break
        return lo

    best = None
    for i in passing:
        cl = min(arc_clearance(s_a, samples[i]), arc_clearance(samples[i], s_b))
        rank = (-round(cl, 9), abs(cum[i] - mid_len), i)
        if best is None or rank < best[0]:
            best = (rank, i)
    return best[1]


def _perturbations(samples, idx, cfg: SearchConfig):
    """Close-by variants of a guide state: lateral offsets and heading nudges."""
    q = samples[idx]
    lo = samples[max(idx - 1, 0)]
    hi = samples[min(idx + 1, len(samples) - 1)]
    tx, ty = hi.x - lo.x, hi.y - lo.y
    nrm = math.hypot(tx, ty)
    if nrm < 1e-12:
        tx, ty = math.cos(q.psi), math.sin(q.psi)
        nrm = 1.0
    lx, ly = -ty / nrm, tx / nrm
    d = cfg.alpha_min
    dpsi = math.pi / 24
    out = [
        SE2State(q.x + d * lx, q.y + d * ly, q.psi),
        SE2State(q.x - d * lx, q.y - d * ly, q.psi),
        SE2State(q.x, q.y, q.psi + dpsi),
        SE2State(q.x, q.y, q.psi - dpsi),
    ]
    return out[: cfg.n_perturb]


def kghs_search(
    path,
    cfg: SearchConfig,
    intr: ObjectIntrinsics,
    ws: Workspace,
    candidates: ContactCandidateSet,
    obj: PosedObject | None = None,
    stats: SearchStats | None = None,
) -> HybridPlan:
    """Search the keyframe decompositions of a guiding path for a plan.

    Anytime best-first: nodes are popped by estimated total cost, complete
    plans are recorded as incumbents, and the loop stops once the cheapest
    open estimate cannot beat the incumbent (or a budget runs out).
    Raises NoFeasiblePlanError when no complete plan was found.
    """
    states = list(getattr(path, "states", path))
    if len(states) < 2:
        raise ValueError("guiding path needs at least two states")
    if obj is None:
        raise ValueError("posed object shape required for collision checks")
    c = intr.c
    t0 = time.monotonic()
    samples, cum = _densify(states, c, cfg.alpha_min / 2)
    total_len = cum[-1]
    depth_cap = max(4, int(math.ceil(2.0 * total_len / cfg.alpha_min)))

    arc_cache: dict[tuple, ArcTransition] = {}
    free_cache: dict[tuple, bool] = {}
    loss_cache: dict[tuple, float] = {}
    mode_cache: dict[tuple, list[InteractionMode]] = {}
    sw_cache: dict[tuple, float] = {}
    report_box: list = []

    def skey(s: SE2State):
        return (s.x, s.y, s.psi)

    def arc_of(a: SE2State, b: SE2State) -> ArcTransition:
        k = (skey(a), skey(b))
        if k not in arc_cache:
            arc_cache[k] = connect_arc(a, b, NOMINAL_SPEED, c)
        return arc_cache[k]

    def arc_free(a: SE2State, b: SE2State) -> bool:
        k = (skey(a), skey(b))
        if k not in free_cache:
            arc = arc_of(a, b)
            ok = True
            for s in sample_arc(arc, cfg.alpha_min / 2, c):
                if obj.collides(s, ws):
                    ok = False
                    break
            free_cache[k] = ok
        return free_cache[k]

    def seg_len(a: SE2State, b: SE2State) -> float:
        return arc_of(a, b).generalized_length(c)

    def loss_of(mode: InteractionMode, a: SE2State, b: SE2State) -> float:
        k = (id(mode), skey(a), skey(b))
        if k not in loss_cache:
            loss_cache[k] = arc_loss(intr, mode, arc_of(a, b), weights=cfg.weights)
        return loss_cache[k]

    def modes_of(a: SE2State, b: SE2State) -> list[InteractionMode]:
        k = (skey(a), skey(b))
        if k not in mode_cache:
            arc = arc_of(a, b)
            gen = mg_so(
                intr, candidates, np.asarray(arc.p_body), cfg.n_robots,
                n_modes=cfg.n_modes, weights=cfg.weights, seed=cfg.seed,
            )
            mode_cache[k] = list(gen.modes)
        return mode_cache[k]

    def sw(ma: InteractionMode | None, mb: InteractionMode | None) -> float:
        if ma is None or mb is None or ma is mb:
            return 0.0
        k = (id(ma), id(mb))
        if k not in sw_cache:
            sw_cache[k] = switch_time(ma, mb, cfg.robot_speed, candidates.perimeter)
        return sw_cache[k]

    def sufficiency():
        if not report_box:
            report_box.append(
                check_sufficient(intr, candidates, cfg.n_robots, n_modes=cfg.n_modes,
                                 weights=cfg.weights, seed=cfg.seed)
            )
        return report_box[0]

    # node: (keyframes, C, H, depth); keyframe entry: (state, mode, anchor)
    start, goal = states[0], states[-1]
    root_kfs = ((start, None, 0), (goal, None, len(samples) - 1))
    root = (root_kfs, 0.0, seg_len(start, goal), 0)

    counter = itertools.count()
    heap = []

    def push(node):
        kfs, C, H, _depth = node
        unassigned = sum(1 for e in kfs[:-1] if e[1] is None)
        heapq.heappush(heap, (C + H, unassigned, next(counter), node))
        if stats is not None:
            stats.enqueued += 1

    push(root)
    best: tuple[float, tuple] | None = None
    incumbents: list[float] = []
    expansions = 0

    while heap:
        f, _u, _seq, node = heapq.heappop(heap)
        kfs, C, H, depth = node
        if best is not None and f >= best[0]:
            break
        if time.monotonic() - t0 > cfg.max_seconds:
            break
        first = next((i for i, e in enumerate(kfs[:-1]) if e[1] is None), None)
        if first is None:
            if best is None or C < best[0]:
                best = (C, kfs)
                incumbents.append(C)
            continue
        if expansions >= cfg.max_nodes or depth >= depth_cap:
            continue
        expansions += 1

        s_a, _m, anch_a = kfs[first]
        s_b, _mb, anch_b = kfs[first + 1]
        prev_mode = kfs[first - 1][1] if first > 0 else None
        arc = arc_of(s_a, s_b)
        if arc_free(s_a, s_b):
            modes = modes_of(s_a, s_b)
            allowed_any = False
            for m in modes:
                # a mode that cannot perform this segment's motion can never
                # sit inside a valid plan, so the child is dropped outright
                if not velocity_allowed(intr, m, arc.p_body):
                    continue
                allowed_any = True
                child_kfs = kfs[:first] + ((s_a, m, anch_a),) + kfs[first + 1 :]
                dC = loss_of(m, s_a, s_b) + cfg.w_t * sw(prev_mode, m)
                push((child_kfs, C + dC, H - seg_len(s_a, s_b), depth + 1))
            if not allowed_any:
                try:
                    res = sata(intr, sufficiency(), s_a, s_b, cfg.e_sata)
                except InsufficientModesError:
                    res = None
                if res is not None and res.modes:
                    chain = []
                    dC = cfg.w_t * sw(prev_mode, res.modes[0])
                    qs = res.keyframes
                    for i, m in enumerate(res.modes):
                        chain.append((qs[i], m, anch_a))
                        dC += arc_loss(intr, m, res.arcs[i])
                        if i + 1 < len(res.modes):
                            dC += cfg.w_t * sw(m, res.modes[i + 1])
                    end = qs[len(res.modes)]
                    dH = -seg_len(s_a, s_b)
                    if weighted_distance(end, s_b, c) > MERGE_TOL:
                        chain.append((end, None, anch_b))
                        dH += seg_len(end, s_b)
                    child_kfs = kfs[:first] + tuple(chain) + kfs[first + 1 :]
                    push((child_kfs, C + dC, H + dH, depth + 1))
        else:
            split = select_split(samples, cum, anch_a, anch_b, s_a, s_b, ws, obj, intr, cfg)
            if split is None:
                continue
            cands_states = []
            if not obj.collides(samples[split], ws):
                cands_states.append((samples[split], split))
            for p in _perturbations(samples, split, cfg):
                if obj.collides(p, ws):
                    continue
                if not arc_free(samples[split], p):
                    continue
                cands_states.append((p, split))
            for s_new, anch in cands_states:
                if (
                    weighted_distance(s_new, s_a, c) < MERGE_TOL
                    or weighted_distance(s_new, s_b, c) < MERGE_TOL
                ):
                    continue
                child_kfs = (
                    kfs[:first]
                    + ((s_a, None, anch_a), (s_new, None, anch))
                    + kfs[first + 1 :]
                )
                dH = seg_len(s_a, s_new) + seg_len(s_new, s_b) - seg_len(s_a, s_b)
                push((child_kfs, C, H + dH, depth + 1))

    if stats is not None:
        stats.expansions = expansions
        stats.incumbent_costs = incumbents
        stats.elapsed = time.monotonic() - t0
    if best is None:
        raise NoFeasiblePlanError("no feasible plan within budget")
    kfs = best[1]
    return HybridPlan(tuple(Keyframe(s, m) for s, m, _a in kfs), best[0], 0.0)
