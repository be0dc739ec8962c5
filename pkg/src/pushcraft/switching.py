"""Robot reassignment between pushing modes along the object boundary.

Contacts map to a circle through their boundary arc-length fraction. A
diameter angle is chosen so that each half-circle holds as many old contacts
as new ones; numbering both sets clockwise from that angle and matching equal
numbers yields boundary paths that stay on their own side of the cut, never
cross, and never exceed half the perimeter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Polygon
from .statics import InteractionMode

TWO_PI = 2.0 * math.pi


def _ring_gap(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


@dataclass(frozen=True)
class BoundaryPath:
    """Directed boundary arc from one contact fraction to another.

    direction +1 walks toward increasing fraction, -1 toward decreasing;
    length is the walked fraction of the perimeter.
    """

    start: float
    end: float
    direction: int
    length_frac: float

    def sample_fracs(self, n: int) -> list[float]:
        if n < 2 or self.length_frac == 0.0:
            return [self.start % 1.0, self.end % 1.0]
        out = []
        for i in range(n):
            t = self.start + self.direction * self.length_frac * i / (n - 1)
            out.append(t % 1.0)
        return out


@dataclass(frozen=True)
class SwitchAssignment:
    permutation: tuple[int, ...]  # permutation[i] = new-contact index for old i
    theta_star: float
    paths: tuple[BoundaryPath, ...]  # indexed like the old contacts
    max_path_frac: float


def _balancing_angle(old_angles, new_angles) -> float:
    """Diameter angle in [0, pi) with equal old/new counts per side.

    Side membership only changes when the diameter sweeps past a point, so
    the midpoint of each interval between event angles is representative.
    The widest balancing interval gives the largest margin to any contact.
    Degenerate layouts (antipodal leftovers) may admit no exact balance; the
    least-imbalanced diameter is returned then, trading the half-perimeter
    guarantee for robustness.
    """
    events = sorted({a % math.pi for a in old_angles} | {a % math.pi for a in new_angles})
    if not events:
        return 0.0
    best = None  # (imbalance, -width, mid)
    for i, lo in enumerate(events):
        hi = events[i + 1] if i + 1 < len(events) else events[0] + math.pi
        if hi - lo < 1e-12:
            continue
        mid = (0.5 * (lo + hi)) % math.pi
        in_a = lambda a: ((a - mid) % TWO_PI) < math.pi
        diff = abs(sum(map(in_a, old_angles)) - sum(map(in_a, new_angles)))
        key = (diff, -(hi - lo), mid)
        if best is None or key < best:
            best = key
    return best[2]


def assign_switch(old_params, new_params) -> SwitchAssignment:
    """Match old boundary fractions to new ones without path crossings.

    Points are walked clockwise from the balancing diameter and paired with a
    stack (nearest unmatched point of the other kind), which yields nested or
    disjoint boundary intervals. Each half-circle holds equal counts, so the
    stack drains at the diameter's far end and no pair spans it: every path
    stays under half the perimeter. Robots already sitting on a new contact
    stay put; a shared contact otherwise sits on one half-circle with both
    sets at once and can make the balance unattainable.
    """
    old_params = [p % 1.0 for p in old_params]
    new_params = [p % 1.0 for p in new_params]
    if len(old_params) != len(new_params):
        raise ValueError("old and new contact counts differ")
    n = len(old_params)
    if n == 0:
        return SwitchAssignment((), 0.0, (), 0.0)
    perm = [0] * n
    paths: list[BoundaryPath | None] = [None] * n

    free_new = list(range(n))
    rest_old = []
    for i, p in enumerate(old_params):
        j = next((j for j in free_new if _ring_gap(p, new_params[j]) < 1e-12), None)
        if j is None:
            rest_old.append(i)
            continue
        free_new.remove(j)
        perm[i] = j
        paths[i] = BoundaryPath(p, new_params[j], 0, 0.0)
    if not rest_old:
        return SwitchAssignment(tuple(perm), 0.0, tuple(paths), 0.0)

    old_ang = {i: TWO_PI * old_params[i] for i in rest_old}
    new_ang = {j: TWO_PI * new_params[j] for j in free_new}
    theta = _balancing_angle(list(old_ang.values()), list(new_ang.values()))

    def cw_offset(a: float) -> float:
        return (theta - a) % TWO_PI

    events = sorted(
        [(cw_offset(old_ang[i]), 0, i) for i in rest_old]
        + [(cw_offset(new_ang[j]), 1, j) for j in free_new]
    )
    max_frac = 0.0
    stack: list[tuple[float, int, int]] = []
    for u, kind, idx in events:
        if not stack or stack[-1][1] == kind:
            stack.append((u, kind, idx))
            continue
        u2, _kind2, idx2 = stack.pop()
        i, j = (idx2, idx) if kind == 1 else (idx, idx2)
        perm[i] = j
        du = cw_offset(new_ang[j]) - cw_offset(old_ang[i])
        frac = abs(du) / TWO_PI
        # clockwise in angle = decreasing boundary fraction
        direction = -1 if du > 0 else 1
        if frac > 0.5:
            # unbalanced fallback only: take the complementary, shorter arc
            frac, direction = 1.0 - frac, -direction
        paths[i] = BoundaryPath(old_params[i], new_params[j], direction, frac)
        max_frac = max(max_frac, frac)
    return SwitchAssignment(tuple(perm), theta, tuple(paths), max_frac)


def switch_time(
    mode_a: InteractionMode,
    mode_b: InteractionMode,
    robot_speed: float,
    perimeter: float,
) -> float:
    """Time for the slowest robot to walk its reassignment path."""
    if mode_a is mode_b:
        return 0.0
    pa = [c.param for c in mode_a.contacts]
    pb = [c.param for c in mode_b.contacts]
    if any(math.isnan(p) for p in pa + pb):
        raise ValueError("contacts lack boundary fractions")
    if sorted(pa) == sorted(pb):
        return 0.0
    assignment = assign_switch(pa, pb)
    return assignment.max_path_frac * perimeter / robot_speed


def path_waypoints(
    shape: Polygon,
    path: BoundaryPath,
    robot_radius: float,
    clearance: float = 0.02,
    spacing: float = 0.05,
) -> np.ndarray:
    """World waypoints along a boundary path, offset outward of the object."""
    from .modegen import boundary_point

    length = max(path.length_frac * shape.perimeter, 1e-9)
    n = max(2, int(math.ceil(length / spacing)) + 1)
    pts = []
    for t in path.sample_fracs(n):
        point, normal = boundary_point(shape, t)
        pts.append(point - (robot_radius + clearance) * normal)
    return np.asarray(pts)


def crossing_pairs(assignment: SwitchAssignment) -> list[tuple[int, int]]:
    """Pairs of paths whose circle intervals interleave (diagnostic)."""
    theta = assignment.theta_star
    spans = []
    for p in assignment.paths:
        a = (theta - TWO_PI * p.start) % TWO_PI
        b = (theta - TWO_PI * p.end) % TWO_PI
        spans.append((min(a, b), max(a, b)))
    bad = []
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            lo_i, hi_i = spans[i]
            lo_j, hi_j = spans[j]
            inside_j = (lo_i < lo_j < hi_i) != (lo_i < hi_j < hi_i)
            inside_i = (lo_j < lo_i < hi_j) != (lo_j < hi_i < hi_j)
            if inside_j or inside_i:
                bad.append((i, j))
    return bad
