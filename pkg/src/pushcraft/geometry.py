"""Planar geometry: SE(2) states, polygons, collision and clearance queries.

All shapes are simple polygons with counter-clockwise vertex order. Concave
shapes are decomposed into convex parts once and queried part-wise with the
separating-axis test. Obstacle inflation (for planning clearance) is a
circumscribed polygonal offset, so inflated queries are slightly conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a - math.pi


def rot(theta: float) -> np.ndarray:
    """2x2 rotation matrix."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class SE2State:
    """Planar pose (x, y, psi), psi in radians."""

    x: float
    y: float
    psi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])

    @staticmethod
    def from_array(a) -> "SE2State":
        return SE2State(float(a[0]), float(a[1]), float(a[2]))

    def transform_point(self, p) -> np.ndarray:
        """Body point -> world point."""
        c, s = math.cos(self.psi), math.sin(self.psi)
        return np.array([self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]])


def weighted_distance(a: SE2State, b: SE2State, angle_weight: float) -> float:
    """SE(2) distance sqrt(dx^2 + dy^2 + (w*dpsi)^2) with wrapped heading."""
    dpsi = wrap_angle(b.psi - a.psi)
    return math.hypot(b.x - a.x, b.y - a.y, angle_weight * dpsi)


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _centroid(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * float(np.sum(cross))
    cx = float(np.sum((x + np.roll(x, -1)) * cross)) / (6.0 * area)
    cy = float(np.sum((y + np.roll(y, -1)) * cross)) / (6.0 * area)
    return np.array([cx, cy])


def integral_abs_radius(vertices: np.ndarray) -> float:
    """Exact integral of ||r|| dA over the polygon, r measured from the origin.

    Per-edge closed form: the signed triangle (0, a, b) contributes
    sign * h^3/3 * [F(phi)]_a^b with F(phi) = (tan*sec + asinh(tan))/2,
    integrating r^3/3 over the wedge in polar coordinates.
    """
    total = 0.0
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        cross = a[0] * b[1] - a[1] * b[0]
        edge = b - a
        elen = math.hypot(edge[0], edge[1])
        if elen < 1e-15 or abs(cross) < 1e-15:
            continue  # degenerate edge or edge line through origin
        h = abs(cross) / elen
        u = edge / elen
        t0 = -float(np.dot(a, u))  # foot of perpendicular along the edge
        ta = -t0 / h
        tb = (elen - t0) / h

        def F(t: float) -> float:
            return 0.5 * (t * math.sqrt(1.0 + t * t) + math.asinh(t))

        total += math.copysign(1.0, cross) * (h ** 3 / 3.0) * (F(tb) - F(ta))
    return total


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


class Polygon:
    """Simple polygon with CCW vertex order (enforced on construction)."""

    def __init__(self, vertices) -> None:
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError("polygon needs at least 3 planar vertices")
        if _signed_area(v) < 0.0:
            v = v[::-1].copy()
        if abs(_signed_area(v)) < 1e-12:
            raise ValueError("degenerate polygon (zero area)")
        self.vertices = v

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        return _centroid(self.vertices)

    @property
    def perimeter(self) -> float:
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))

    def circumradius(self, center=None) -> float:
        c = self.centroid if center is None else np.asarray(center, dtype=float)
        return float(np.max(np.hypot(*(self.vertices - c).T)))

    def edges(self):
        n = len(self.vertices)
        for i in range(n):
            yield self.vertices[i], self.vertices[(i + 1) % n]

    def is_convex(self) -> bool:
        v = self.vertices
        n = len(v)
        for i in range(n):
            a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
            if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) < -1e-12:
                return False
        return True

    def is_simple(self) -> bool:
        """Brute-force non-adjacent edge intersection check."""
        segs = list(self.edges())
        n = len(segs)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _segments_intersect(segs[i][0], segs[i][1], segs[j][0], segs[j][1]):
                    return False
        return True

    def contains_point(self, p, tol: float = 0.0) -> bool:
        """Even-odd containment; tol > 0 accepts points within tol of the boundary."""
        x, y = float(p[0]), float(p[1])
        inside = False
        v = self.vertices
        n = len(v)
        j = n - 1
        for i in range(n):
            xi, yi = v[i]
            xj, yj = v[j]
            if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
            j = i
        if inside or tol <= 0.0:
            return inside
        return self.distance_to_point(p) <= tol

    def distance_to_point(self, p) -> float:
        """Distance from p to the boundary (0 if inside only when asked via contains)."""
        p = np.asarray(p, dtype=float)
        best = math.inf
        for a, b in self.edges():
            ab = b - a
            t = float(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-18))
            t = min(1.0, max(0.0, t))
            q = a + t * ab
            best = min(best, float(math.hypot(*(p - q))))
        return best

    def transform(self, pose: SE2State) -> np.ndarray:
        """World vertices of this polygon placed at pose."""
        c, s = math.cos(pose.psi), math.sin(pose.psi)
        R = np.array([[c, -s], [s, c]])
        return self.vertices @ R.T + np.array([pose.x, pose.y])


# ---------------------------------------------------------------------------
# convex decomposition


def _ear_clip(vertices: np.ndarray) -> list[np.ndarray]:
    """Triangulate a simple CCW polygon by ear clipping."""
    idx = list(range(len(vertices)))
    tris: list[np.ndarray] = []

    def is_ear(i0, i1, i2) -> bool:
        a, b, c = vertices[i0], vertices[i1], vertices[i2]
        if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) <= 1e-14:
            return False  # reflex or colinear
        for j in idx:
            if j in (i0, i1, i2):
                continue
            p = vertices[j]
            d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
            d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
            if d1 >= -1e-14 and d2 >= -1e-14 and d3 >= -1e-14:
                return False
        return True

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise ValueError("ear clipping failed; polygon may be non-simple")
        clipped = False
        for k in range(len(idx)):
            i0 = idx[k - 1]
            i1 = idx[k]
            i2 = idx[(k + 1) % len(idx)]
            if is_ear(i0, i1, i2):
                tris.append(np.array([vertices[i0], vertices[i1], vertices[i2]]))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise ValueError("no ear found; polygon may be non-simple")
    tris.append(np.array([vertices[i] for i in idx]))
    return tris


def convex_decompose(poly: Polygon) -> list[Polygon]:
    """Split into convex parts: ear clipping, then greedy diagonal merging."""
    if poly.is_convex():
        return [poly]
    parts = [t for t in _ear_clip(poly.vertices)]

    def try_merge(a: np.ndarray, b: np.ndarray):
        na, nb = len(a), len(b)
        for i in range(na):
            for j in range(nb):
                # shared directed edge a[i]->a[i+1] == b[j+1]->b[j]
                if (
                    np.allclose(a[i], b[(j + 1) % nb], atol=1e-12)
                    and np.allclose(a[(i + 1) % na], b[j], atol=1e-12)
                ):
                    merged = [a[(i + 1 + k) % na] for k in range(na - 1)]
                    merged += [b[(j + 1 + k) % nb] for k in range(nb - 1)]
                    m = np.array(merged)
                    if Polygon(m).is_convex():
                        return m
        return None

    changed = True
    while changed:
        changed = False
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                m = try_merge(parts[i], parts[j])
                if m is not None:
                    parts[i] = m
                    parts.pop(j)
                    changed = True
                    break
            if changed:
                break
    return [Polygon(p) for p in parts]


# ---------------------------------------------------------------------------
# collision


def sat_collides(va: np.ndarray, vb: np.ndarray) -> bool:
    """Separating-axis test for two convex vertex sets. Touching counts as collision."""
    for verts in (va, vb):
        n = len(verts)
        for i in range(n):
            ex = verts[(i + 1) % n, 0] - verts[i, 0]
            ey = verts[(i + 1) % n, 1] - verts[i, 1]
            ax, ay = -ey, ex  # edge normal, no normalization needed
            pa = va @ (ax, ay)
            pb = vb @ (ax, ay)
            if pa.max() < pb.min() - 1e-12 or pb.max() < pa.min() - 1e-12:
                return False
    return True


def convex_distance(va: np.ndarray, vb: np.ndarray) -> float:
    """Euclidean distance between two convex polygons (0 if intersecting)."""
    if sat_collides(va, vb):
        return 0.0
    best = math.inf
    for verts, other in ((va, vb), (vb, va)):
        n = len(verts)
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            ab = b - a
            denom = max(float(np.dot(ab, ab)), 1e-18)
            t = np.clip((other - a) @ ab / denom, 0.0, 1.0)
            proj = a[None, :] + t[:, None] * ab[None, :]
            d = np.hypot(*(other - proj).T)
            best = min(best, float(d.min()))
    return best


def inflate_convex(poly: Polygon, radius: float, corner_step: float = math.pi / 12) -> Polygon:
    """Circumscribed polygonal offset: contains the exact disc-Minkowski sum."""
    if radius <= 0.0:
        return poly
    v = poly.vertices
    n = len(v)
    out: list[np.ndarray] = []
    for i in range(n):
        prev_edge = v[i] - v[i - 1]
        next_edge = v[(i + 1) % n] - v[i]
        n1 = np.array([prev_edge[1], -prev_edge[0]])
        n2 = np.array([next_edge[1], -next_edge[0]])
        a1 = math.atan2(n1[1], n1[0])
        a2 = math.atan2(n2[1], n2[0])
        sweep = wrap_angle(a2 - a1)
        if sweep < 0.0:
            sweep += TWO_PI  # convex corner turns CCW through outward normals
        steps = max(1, int(math.ceil(sweep / corner_step)))
        r_out = radius / math.cos(sweep / (2 * steps))
        for k in range(steps + 1):
            ang = a1 + sweep * k / steps
            # midpoints of arc chords pushed to r_out so chords stay outside radius
            rr = radius if k in (0, steps) else r_out
            out.append(v[i] + rr * np.array([math.cos(ang), math.sin(ang)]))
    return Polygon(np.array(out))


@dataclass
class Workspace:
    """Bounded planar workspace with static polygonal obstacles.

    bounds must be convex. inflation_radius grows obstacles and shrinks the
    bounds for clearance-aware queries (planning); a zero-inflation copy is
    what the simulator treats as ground truth.
    """

    bounds: Polygon
    obstacles: list[Polygon] = field(default_factory=list)
    inflation_radius: float = 0.0

    def __post_init__(self) -> None:
        if not self.bounds.is_convex():
            raise ValueError("workspace bounds must be convex")
        self._parts: list[np.ndarray] = []
        self._part_centers: list[np.ndarray] = []
        self._part_radii: list[float] = []
        for obs in self.obstacles:
            for part in convex_decompose(obs):
                grown = inflate_convex(part, self.inflation_radius)
                self._parts.append(grown.vertices)
                c = grown.centroid
                self._part_centers.append(c)
                self._part_radii.append(grown.circumradius(c))
        # bounds as half-planes (outward normals), shrunk by the inflation
        v = self.bounds.vertices
        n = len(v)
        self._bound_normals = np.zeros((n, 2))
        self._bound_offsets = np.zeros(n)
        for i in range(n):
            e = v[(i + 1) % n] - v[i]
            nrm = np.array([e[1], -e[0]])
            nrm = nrm / math.hypot(*nrm)
            self._bound_normals[i] = nrm
            self._bound_offsets[i] = float(np.dot(nrm, v[i])) - self.inflation_radius

    def with_inflation(self, radius: float) -> "Workspace":
        return Workspace(self.bounds, list(self.obstacles), radius)

    def inside_bounds(self, world_vertices: np.ndarray) -> bool:
        proj = world_vertices @ self._bound_normals.T - self._bound_offsets
        return bool(np.all(proj <= 1e-12))

    def collides(self, world_vertices: np.ndarray, center=None, radius: float | None = None) -> bool:
        """True if the convex vertex set hits an inflated obstacle or exits bounds."""
        if not self.inside_bounds(world_vertices):
            return True
        if center is None:
            center = world_vertices.mean(axis=0)
            radius = float(np.max(np.hypot(*(world_vertices - center).T)))
        for verts, pc, pr in zip(self._parts, self._part_centers, self._part_radii):
            dx = center[0] - pc[0]
            dy = center[1] - pc[1]
            if dx * dx + dy * dy > (radius + pr) ** 2:
                continue
            if sat_collides(world_vertices, verts):
                return True
        return False

    def clearance(self, world_vertices: np.ndarray) -> float:
        """Min distance to any inflated obstacle / bounds edge (negative if colliding)."""
        proj = world_vertices @ self._bound_normals.T - self._bound_offsets
        best = float(-np.max(proj))
        if best < 0.0:
            return best
        for verts in self._parts:
            if sat_collides(world_vertices, verts):
                return -0.0 if best >= 0.0 else best
            best = min(best, convex_distance(world_vertices, verts))
        return best

    def point_clearance(self, p) -> float:
        """Distance from a point to the nearest raw-geometry obstacle or bound."""
        p = np.asarray(p, dtype=float)
        proj = float(np.max(p @ self._bound_normals.T - self._bound_offsets))
        best = -proj + self.inflation_radius  # back out the shrink for point queries
        for obs in self.obstacles:
            d = obs.distance_to_point(p)
            if obs.contains_point(p):
                d = -d
            best = min(best, d)
        return best


class PosedObject:
    """Object shape with cached convex parts, posed on demand."""

    def __init__(self, shape: Polygon) -> None:
        self.shape = shape
        self.parts = [p.vertices for p in convex_decompose(shape)]
        self.circumradius = shape.circumradius(np.zeros(2))

    def world_parts(self, pose: SE2State) -> list[np.ndarray]:
        c, s = math.cos(pose.psi), math.sin(pose.psi)
        R = np.array([[c, s], [-s, c]])  # transpose baked in
        t = np.array([pose.x, pose.y])
        return [part @ R + t for part in self.parts]

    def collides(self, pose: SE2State, ws: Workspace) -> bool:
        center = np.array([pose.x, pose.y])
        for part in self.world_parts(pose):
            if ws.collides(part, center=center, radius=self.circumradius):
                return True
        return False

    def clearance(self, pose: SE2State, ws: Workspace) -> float:
        return min(ws.clearance(part) for part in self.world_parts(pose))


def _directed_min_dists(A: np.ndarray, B: np.ndarray, angle_weight: float) -> np.ndarray:
    # chunked over A so the pairwise matrix stays bounded
    out = np.empty(len(A))
    step = max(1, int(4_000_000 / max(len(B), 1)))
    for i in range(0, len(A), step):
        a = A[i : i + step]
        dx = a[:, None, 0] - B[None, :, 0]
        dy = a[:, None, 1] - B[None, :, 1]
        dpsi = a[:, None, 2] - B[None, :, 2]
        dpsi = np.mod(dpsi + math.pi, TWO_PI) - math.pi
        d = dx ** 2 + dy ** 2 + (angle_weight * dpsi) ** 2
        out[i : i + step] = d.min(axis=1)
    return np.sqrt(out)


def hausdorff(states_a, states_b, angle_weight: float) -> float:
    """Symmetric Hausdorff distance between two SE(2) state sequences."""
    A = np.asarray([s.as_array() if isinstance(s, SE2State) else s for s in states_a])
    B = np.asarray([s.as_array() if isinstance(s, SE2State) else s for s in states_b])
    return float(
        max(
            _directed_min_dists(A, B, angle_weight).max(),
            _directed_min_dists(B, A, angle_weight).max(),
        )
    )
