"""Interaction-mode generation and segment approximation.

Candidate contacts are sampled along the object boundary. A single LP scores
all candidates across six probe directions at once (row-sparse force matrix);
modes are extracted from its high-score rows. A sufficiency check builds a
witness table mapping signed basis velocities to modes that allow them,
falling back to pairs of allowed screw blends when an axis is not directly
allowed. sata() approximates an arbitrary arc by a sequence of witnessed arcs
to any accuracy by doubling the split count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .arcs import ArcTransition, connect_arc, roll_arc, sample_arc
from .geometry import Polygon, SE2State, Workspace, hausdorff, weighted_distance
from .statics import (
    DEFAULT_DIRECTION_WEIGHTS,
    TOL_LP,
    ContactPoint,
    InteractionMode,
    ObjectIntrinsics,
    _solve_balance,
    direction_set,
    feasibility,
    friction_force,
)

DEFAULT_N_MODES = 5


@dataclass(frozen=True)
class ContactCandidateSet:
    """Discrete admissible contact points along the object boundary."""

    contacts: tuple[ContactPoint, ...]
    perimeter: float
    robot_radius: float
    segment_len: float

    def __len__(self) -> int:
        return len(self.contacts)

    def ring_distance(self, a: ContactPoint, b: ContactPoint) -> float:
        """Boundary arc-length between two contacts."""
        d = abs(a.param - b.param)
        return min(d, 1.0 - d) * self.perimeter

    def spacing_ok(self, contacts) -> bool:
        cs = list(contacts)
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                if self.ring_distance(cs[i], cs[j]) < 2.0 * self.robot_radius - 1e-9:
                    return False
        return True


def boundary_point(shape: Polygon, param: float) -> tuple[np.ndarray, np.ndarray]:
    """(point, inward normal) at arc-length fraction param of the boundary."""
    target = (param % 1.0) * shape.perimeter
    acc = 0.0
    for a, b in shape.edges():
        elen = math.hypot(*(b - a))
        if acc + elen >= target or math.isclose(acc + elen, target):
            t = (target - acc) / elen
            point = a + t * (b - a)
            d = (b - a) / elen
            return point, np.array([-d[1], d[0]])
        acc += elen
    a, b = list(shape.edges())[-1]
    d = (b - a) / math.hypot(*(b - a))
    return b, np.array([-d[1], d[0]])


def candidate_contacts(
    shape: Polygon,
    robot_radius: float,
    push_max: float,
    segment_len: float | None = None,
    workspace: Workspace | None = None,
    poses: list[SE2State] | None = None,
) -> ContactCandidateSet:
    """Sample contact candidates at boundary segment midpoints.

    Segments default to one robot diameter so adjacent candidates are one
    robot width apart. A candidate survives if a robot disc tangent at the
    contact fits: it must not overlap the object itself (reflex corners) nor,
    when a workspace and pose samples are given, obstacles at any sampled
    pose.
    """
    if segment_len is None:
        segment_len = 2.0 * robot_radius
    perimeter = shape.perimeter
    contacts = []
    acc = 0.0
    for a, b in shape.edges():
        edge = b - a
        elen = math.hypot(*edge)
        k = max(1, int(math.ceil(elen / segment_len)))
        d = edge / elen
        inward = np.array([-d[1], d[0]])
        for i in range(k):
            t = (i + 0.5) / k
            point = a + t * edge
            param = (acc + t * elen) / perimeter
            center = point - inward * robot_radius  # disc center, outward side
            if shape.contains_point(center):
                continue
            if shape.distance_to_point(center) < robot_radius - 1e-6:
                continue
            if workspace is not None and poses:
                ok = all(
                    workspace.point_clearance(p.transform_point(center)) >= robot_radius - 1e-9
                    for p in poses
                )
                if not ok:
                    continue
            contacts.append(
                ContactPoint(
                    point=(float(point[0]), float(point[1])),
                    normal=(float(inward[0]), float(inward[1])),
                    push_max=push_max,
                    param=float(param),
                )
            )
        acc += elen
    return ContactCandidateSet(
        contacts=tuple(contacts),
        perimeter=perimeter,
        robot_radius=robot_radius,
        segment_len=segment_len,
    )


# ---------------------------------------------------------------------------
# mode generation


@dataclass
class ModeGenResult:
    modes: list[InteractionMode]
    row_scores: np.ndarray
    residuals: np.ndarray  # per probe direction, L1 balance residual
    force_matrix: np.ndarray  # rows = candidates, cols = (fn, ft) per direction


def mg_so(
    intr: ObjectIntrinsics,
    candidates: ContactCandidateSet,
    main_direction,
    n_robots: int,
    n_modes: int = DEFAULT_N_MODES,
    weights=DEFAULT_DIRECTION_WEIGHTS,
    seed: int = 0,
    sparsity_weight: float = 0.05,
) -> ModeGenResult:
    """Sparse simultaneous force balancing over all candidates and directions.

    One LP minimizes per-direction L1 balance residuals plus a small row
    penalty (Linf + L1 of each candidate's force row) that concentrates force
    on few contacts. Modes are read off the top-scoring rows: the best
    n_robots rows first, then variants swapping in one random remaining row.
    Modes whose contacts sit closer than a robot diameter along the boundary
    are discarded.
    """
    M = len(candidates)
    if M == 0:
        raise ValueError("no contact candidates")
    if n_robots > M:
        raise ValueError("more robots than candidates")
    dirs_all = direction_set(main_direction, intr)
    active = [(d, w) for d, w in zip(dirs_all, weights) if w != 0.0]
    D = len(active)
    mu = intr.mu_contact

    cols = [c.columns() for c in candidates.contacts]
    Jn = np.column_stack([c[0] for c in cols])  # 3 x M
    Jt = np.column_stack([c[1] for c in cols])

    # variables: fn[d,m], ftp[d,m], ftm[d,m] (d-major), z[m], r[d,3]
    nF = D * M
    off_ftp = nF
    off_ftm = 2 * nF
    off_z = 3 * nF
    off_r = off_z + M
    nvar = off_r + 3 * D

    rows_A, cols_A, vals_A, b_ub = [], [], [], []
    row = 0

    def add(r_, c_, v_):
        rows_A.append(r_)
        cols_A.append(c_)
        vals_A.append(v_)

    for d in range(D):
        for m in range(M):
            # Coulomb both signs
            add(row, off_ftp + d * M + m, 1.0)
            add(row, d * M + m, -mu)
            b_ub.append(0.0)
            row += 1
            add(row, off_ftm + d * M + m, 1.0)
            add(row, d * M + m, -mu)
            b_ub.append(0.0)
            row += 1
            # row inf-norm dominates every entry
            for offset in (0, off_ftp, off_ftm):
                add(row, offset + d * M + m, 1.0)
                add(row, off_z + m, -1.0)
                b_ub.append(0.0)
                row += 1
    for d, (pdir, _w) in enumerate(active):
        eta = friction_force(intr, pdir)
        for k in range(3):
            # J F + eta <= r and -(J F + eta) <= r
            for m in range(M):
                add(row, d * M + m, Jn[k, m])
                add(row, off_ftp + d * M + m, Jt[k, m])
                add(row, off_ftm + d * M + m, -Jt[k, m])
            add(row, off_r + d * 3 + k, -1.0)
            b_ub.append(-eta[k])
            row += 1
            for m in range(M):
                add(row, d * M + m, -Jn[k, m])
                add(row, off_ftp + d * M + m, -Jt[k, m])
                add(row, off_ftm + d * M + m, Jt[k, m])
            add(row, off_r + d * 3 + k, -1.0)
            b_ub.append(eta[k])
            row += 1

    from scipy.sparse import coo_matrix

    A = coo_matrix((vals_A, (rows_A, cols_A)), shape=(row, nvar))
    cost = np.zeros(nvar)
    cost[: 3 * nF] = sparsity_weight  # L1 part of the row penalty
    cost[off_z : off_z + M] = sparsity_weight
    cost[off_r:] = 1.0
    push = np.array([c.push_max for c in candidates.contacts])
    bounds = (
        [(0.0, float(push[m])) for _ in range(D) for m in range(M)]
        + [(0.0, float(mu * push[m])) for _ in range(2) for _d in range(D) for m in range(M)]
        + [(0.0, None)] * (M + 3 * D)
    )
    res = linprog(cost, A_ub=A.tocsc(), b_ub=np.array(b_ub), bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"mode-generation LP failed: {res.message}")

    fn = res.x[:nF].reshape(D, M)
    ft = (res.x[off_ftp : off_ftp + nF] - res.x[off_ftm : off_ftm + nF]).reshape(D, M)
    residuals = res.x[off_r:].reshape(D, 3).sum(axis=1)

    # The row penalty is a convex surrogate for row count, so vertex optima
    # may spread one direction's force across rows that other directions
    # already load. Re-concentrate: per direction, move its columns onto the
    # smallest contact subset (at most n_robots rows, rows already kept
    # first) that reproduces the achieved residual.
    kept: set[int] = set()
    etas = [friction_force(intr, pdir) for pdir, _w in active]
    for d in range(D):
        target = residuals[d] + 1e-9
        found = None
        budget = 500  # subset evaluations per direction
        for k in range(1, n_robots + 1):
            subsets = sorted(
                combinations(range(M), k),
                key=lambda s: (sum(1 for i in s if i not in kept), s),
            )
            for sub in subsets:
                if budget == 0:
                    break
                budget -= 1
                mode = InteractionMode([candidates.contacts[i] for i in sub])
                val, _q, F = _solve_balance(intr, mode, etas[d])
                if val <= target:
                    found = (sub, F)
                    break
            if found is not None or budget == 0:
                break
        if found is None:
            kept.update(np.flatnonzero((fn[d] > TOL_LP) | (np.abs(ft[d]) > TOL_LP)).tolist())
            continue
        sub, F = found
        fn[d] = 0.0
        ft[d] = 0.0
        k = len(sub)
        for j, i in enumerate(sub):
            fn[d, i] = F[j]
            ft[d, i] = F[k + j]
            if max(F[j], abs(F[k + j])) > TOL_LP:
                kept.add(i)
        residuals[d] = np.abs(Jn @ fn[d] + Jt @ ft[d] + etas[d]).sum()

    force_matrix = np.empty((M, 2 * D))
    force_matrix[:, 0::2] = fn.T
    force_matrix[:, 1::2] = ft.T
    # rank rows on the direction-weighted matrix so the main direction's
    # providers sort first (same weights as the mode quality metric)
    wvec = np.repeat([w for _pdir, w in active], 2)
    weighted = np.abs(force_matrix) * wvec
    scores = weighted.max(axis=1) + weighted.sum(axis=1)

    order = np.lexsort((np.arange(M), -scores))  # score desc, index asc on ties
    nonzero = [int(i) for i in order if scores[i] > TOL_LP]
    ranked = nonzero + [int(i) for i in order if scores[i] <= TOL_LP]

    def build(idxs):
        return InteractionMode([candidates.contacts[i] for i in sorted(idxs)])

    rng = np.random.default_rng(seed)
    picked: list[frozenset] = []
    modes: list[InteractionMode] = []

    def try_add(idxs) -> bool:
        key = frozenset(idxs)
        if len(key) < n_robots or key in picked:
            return False
        mode_contacts = [candidates.contacts[i] for i in idxs]
        if not candidates.spacing_ok(mode_contacts):
            return False
        picked.append(key)
        modes.append(build(idxs))
        return True

    try_add(ranked[:n_robots])
    # deterministic caging proposals: subsets of the loaded rows, pre-ranked
    # by how many probe wrenches their force polytope covers (hulls, no LPs),
    # then the best few re-ranked by the true residual on the missed probes
    pool_rows = nonzero[:12]
    pool = []
    for sub in combinations(sorted(pool_rows), n_robots):
        mode_contacts = [candidates.contacts[i] for i in sub]
        if not candidates.spacing_ok(mode_contacts):
            continue
        mode = InteractionMode(mode_contacts)
        wset = mode.wrench_set(intr)
        missed = [(pdir, w) for pdir, w in active if not wset.allowed(pdir)]
        pool.append((len(missed), sub, mode, missed))
    pool.sort(key=lambda t: (t[0], t[1]))
    quality = []
    for _nmiss, sub, mode, missed in pool[:8]:
        q = sum(w * feasibility(intr, mode, pdir) for pdir, w in missed)
        quality.append((q, sub, mode))
    quality.sort(key=lambda t: (t[0], t[1]))
    for _q, sub, mode in quality + [(None, s, m) for _n, s, m, _ms in pool[8:]]:
        if len(modes) >= max(1, n_modes - 1):
            break
        key = frozenset(sub)
        if key in picked:
            continue
        picked.append(key)
        modes.append(mode)
    attempts = 0
    while len(modes) < n_modes and attempts < 40 * n_modes:
        attempts += 1
        base = ranked[: max(0, n_robots - 1)]
        rest = [i for i in ranked if i not in base]
        if not rest:
            break
        extra = rest[int(rng.integers(0, len(rest)))]
        try_add(base + [extra])
    if len(modes) < n_modes:
        # greedy spacing-respecting sweep as a deterministic fallback
        chosen: list[int] = []
        for i in ranked:
            trial = chosen + [i]
            if candidates.spacing_ok([candidates.contacts[j] for j in trial]):
                chosen.append(i)
            if len(chosen) == n_robots:
                try_add(chosen)
                break
    return ModeGenResult(modes, scores, residuals, force_matrix)


# ---------------------------------------------------------------------------
# sufficiency and witnesses


def key_velocities(intr: ObjectIntrinsics) -> np.ndarray:
    """Signed basis velocities, unit weighted norm: +-x, +-y, +-rotation."""
    c = intr.c
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0 / c],
            [0.0, 0.0, -1.0 / c],
        ]
    )


@dataclass(frozen=True)
class DirectWitness:
    mode: InteractionMode
    residual: float

    @property
    def usable(self) -> bool:
        return self.residual <= TOL_LP


@dataclass(frozen=True)
class CompositeWitness:
    """Two allowed screw velocities whose positive combination is the key."""

    velocity_a: tuple[float, float, float]
    mode_a: InteractionMode
    velocity_b: tuple[float, float, float]
    mode_b: InteractionMode
    blend_angle: float  # key = (a + b) / (2 cos blend_angle) in weighted coords


@dataclass
class SufficiencyReport:
    sufficient: bool  # every key velocity directly allowed in some mode
    complete: bool  # every key velocity has a direct or composite witness
    direct: list[DirectWitness]
    composite: dict[int, CompositeWitness] = field(default_factory=dict)

    def witness_for(self, key_index: int):
        if self.direct[key_index].usable:
            return self.direct[key_index]
        return self.composite.get(key_index)


def _weighted_to_velocity(u, c: float) -> np.ndarray:
    return np.array([u[0], u[1], u[2] / c])


def _best_mode_for(intr, candidates, p, n_robots, n_modes, weights, seed):
    gen = mg_so(intr, candidates, p, n_robots, n_modes=n_modes, weights=weights, seed=seed)
    best, best_val = None, math.inf
    for mode in gen.modes:
        val = feasibility(intr, mode, p)
        if val < best_val:
            best, best_val = mode, val
    return best, best_val


def check_sufficient(
    intr: ObjectIntrinsics,
    candidates: ContactCandidateSet,
    n_robots: int,
    n_modes: int = DEFAULT_N_MODES,
    weights=DEFAULT_DIRECTION_WEIGHTS,
    seed: int = 0,
    blend_angles=(0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.4, 1.45, 1.5, 1.55),
) -> SufficiencyReport:
    """Witness table for the six signed basis velocities.

    A key velocity with no allowed mode gets a composite witness: the
    smallest-angle pair of allowed blends cos(phi) key +- sin(phi) partner
    (partner swept over the other two axes, both weighted-orthonormal), which
    spans the key with positive coefficients.
    """
    keys = key_velocities(intr)
    c = intr.c
    direct: list[DirectWitness] = []
    for i, k in enumerate(keys):
        mode, val = _best_mode_for(intr, candidates, k, n_robots, n_modes, weights, seed + i)
        if mode is None:
            raise RuntimeError("mode generation returned no modes")
        direct.append(DirectWitness(mode, val))

    composite: dict[int, CompositeWitness] = {}
    axis_of = {0: 0, 1: 0, 2: 1, 3: 1, 4: 2, 5: 2}
    unit = np.eye(3)
    for i, k in enumerate(keys):
        if direct[i].usable:
            continue
        kw = np.array([k[0], k[1], c * k[2]])  # weighted coords, unit
        found = None
        for partner_axis in [a for a in range(3) if a != axis_of[i]]:
            for phi in blend_angles:
                ua = math.cos(phi) * kw + math.sin(phi) * unit[partner_axis]
                ub = math.cos(phi) * kw - math.sin(phi) * unit[partner_axis]
                pa = _weighted_to_velocity(ua, c)
                pb = _weighted_to_velocity(ub, c)
                ma, va = _best_mode_for(
                    intr, candidates, pa, n_robots, n_modes, weights, seed + 10 + i
                )
                if va > TOL_LP:
                    continue
                mb, vb = _best_mode_for(
                    intr, candidates, pb, n_robots, n_modes, weights, seed + 20 + i
                )
                if vb > TOL_LP:
                    continue
                found = CompositeWitness(tuple(pa), ma, tuple(pb), mb, phi)
                break
            if found:
                break
        if found:
            composite[i] = found

    sufficient = all(w.usable for w in direct)
    complete = all(direct[i].usable or i in composite for i in range(6))
    return SufficiencyReport(sufficient, complete, direct, composite)


# ---------------------------------------------------------------------------
# segment approximation by witnessed arcs


@dataclass
class SataResult:
    keyframes: list[SE2State]
    arcs: list[ArcTransition]
    modes: list[InteractionMode]
    splits: int
    hausdorff_error: float
    end_error: float


class InsufficientModesError(RuntimeError):
    pass


def sata(
    intr: ObjectIntrinsics,
    report: SufficiencyReport,
    s0: SE2State,
    s1: SE2State,
    tolerance: float,
    nominal_speed: float = 0.5,
    max_splits: int = 128,
) -> SataResult:
    """Approximate the arc s0 -> s1 by witnessed arcs within tolerance.

    Splits the reference arc evenly into L pieces (L doubling), re-aims each
    piece from the achieved state, and replaces its connecting velocity by its
    per-axis decomposition (weighted coordinates, sign picks the signed key;
    composite witnesses contribute their two blends). Stops when both the
    Hausdorff distance to the reference arc and the end-state error are within
    tolerance.
    """
    c = intr.c
    if not report.complete:
        raise InsufficientModesError("mode set cannot span all key velocities")
    ref_arc = connect_arc(s0, s1, nominal_speed, c)
    ref_states = sample_arc(ref_arc, max(tolerance / 2, 1e-3), c)
    keys = key_velocities(intr)

    L = 1
    while True:
        waypoints = [
            roll_arc(s0, ref_arc.p_body, ref_arc.duration * i / L) for i in range(1, L + 1)
        ]
        keyframes = [s0]
        arcs: list[ArcTransition] = []
        modes: list[InteractionMode] = []
        current = s0
        ok = True
        for target in waypoints:
            piece = connect_arc(current, target, nominal_speed, c)
            if piece.duration == 0.0:
                continue
            bx, by, om = piece.p_body
            disp_w = np.array([bx, by, c * om]) * piece.duration
            for axis in range(3):
                a = float(disp_w[axis])
                if abs(a) < 1e-12:
                    continue
                key_index = 2 * axis + (0 if a > 0 else 1)
                witness = report.witness_for(key_index)
                if witness is None:
                    ok = False
                    break
                amount = abs(a)
                if isinstance(witness, DirectWitness):
                    terms = [(keys[key_index], witness.mode, amount)]
                else:
                    lam = amount / (2.0 * math.cos(witness.blend_angle))
                    terms = [
                        (np.asarray(witness.velocity_a), witness.mode_a, lam),
                        (np.asarray(witness.velocity_b), witness.mode_b, lam),
                    ]
                for vel, mode, gen_len in terms:
                    vel = np.asarray(vel, dtype=float)
                    wnorm = math.hypot(vel[0], vel[1], c * vel[2])
                    p = vel / wnorm * nominal_speed
                    duration = gen_len / nominal_speed
                    arc = ArcTransition(current, (p[0], p[1], p[2]), duration)
                    arcs.append(arc)
                    modes.append(mode)
                    current = arc.end
                    keyframes.append(current)
            if not ok:
                break
        if not ok:
            raise InsufficientModesError("witness table incomplete for a needed key")
        achieved = []
        for arc in arcs:
            achieved.extend(sample_arc(arc, max(tolerance / 2, 1e-3), c))
        err_h = hausdorff(
            [s.as_array() for s in achieved], [s.as_array() for s in ref_states], c
        )
        err_end = weighted_distance(current, s1, c)
        if (err_h <= tolerance and err_end <= tolerance) or L >= max_splits:
            return SataResult(keyframes, arcs, modes, L, err_h, err_end)
        L *= 2
