"""Quasi-static pushing mechanics.

Ground friction is an ellipsoidal limit surface: a unit body velocity
direction p = (vx, vy, omega) costs the wrench eta(p) resisting it, and a
contact force combination q balances the push when q + eta(p) = 0. Contact
forces live in per-contact friction cones (bounded normal, Coulomb tangential).
Feasibility of a velocity under a set of contacts (an interaction mode) is the
minimum L1 residual of that balance, an LP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .geometry import Polygon, integral_abs_radius

GRAVITY = 9.81
TOL_LP = 1e-6
DEFAULT_DIRECTION_WEIGHTS = (5.0, 1.0, 1.0, 1.0, 1.0, 1.0)

# A body velocity is a length-3 array (vx, vy, omega); a generalized force
# (wrench) is a length-3 array (fx, fy, m). Plain numpy arrays throughout.


@dataclass(frozen=True)
class ObjectIntrinsics:
    """Support-friction limits of the pushed object.

    f_max: max ground friction force, m_max: max ground friction moment,
    c = m_max / f_max couples translation and rotation and weights angles
    everywhere mixed units appear.
    """

    mass: float
    mu_ground: float
    mu_contact: float
    f_max: float
    m_max: float
    c: float
    area: float

    @staticmethod
    def from_polygon(
        shape: Polygon,
        mass: float,
        mu_ground: float,
        mu_contact: float,
        gravity: float = GRAVITY,
    ) -> "ObjectIntrinsics":
        """Uniform support pressure over the COM-frame shape.

        The shape must already be centered at its centroid (the object frame
        is pinned at the COM).
        """
        c0 = shape.centroid
        if math.hypot(c0[0], c0[1]) > 1e-9:
            raise ValueError("shape must be centered at its COM")
        area = shape.area
        radius_integral = integral_abs_radius(shape.vertices)
        f_max = mu_ground * mass * gravity
        m_max = mu_ground * (mass * gravity / area) * radius_integral
        return ObjectIntrinsics(
            mass=mass,
            mu_ground=mu_ground,
            mu_contact=mu_contact,
            f_max=f_max,
            m_max=m_max,
            c=m_max / f_max,
            area=area,
        )

    def weighted_norm(self, p) -> float:
        """||(vx, vy, c*omega)||, the mixed-unit SE(2) speed."""
        return math.hypot(p[0], p[1], self.c * p[2])


def friction_force(intr: ObjectIntrinsics, p) -> np.ndarray:
    """Ground-friction wrench resisting body velocity p (any positive scale of p)."""
    vx, vy, om = float(p[0]), float(p[1]), float(p[2])
    norm = math.hypot(vx, vy, intr.c * om)
    if norm < 1e-15:
        raise ValueError("friction force undefined at zero velocity")
    s = intr.f_max / norm
    return np.array([-vx * s, -vy * s, -intr.c * intr.c * om * s])


@dataclass(frozen=True)
class ContactPoint:
    """Point contact on the object boundary, COM frame.

    normal points into the object (the direction a robot pushes); tangent is
    the normal rotated +90 deg. push_max bounds the normal force. param is the
    boundary arc-length fraction in [0, 1), used for switch-path planning.
    """

    point: tuple[float, float]
    normal: tuple[float, float]
    push_max: float
    param: float = float("nan")

    @property
    def tangent(self) -> tuple[float, float]:
        return (-self.normal[1], self.normal[0])

    def columns(self) -> tuple[np.ndarray, np.ndarray]:
        """Wrench-per-unit-force columns (normal, tangent)."""
        rx, ry = self.point
        nx, ny = self.normal
        tx, ty = -ny, nx
        return (
            np.array([nx, ny, rx * ny - ry * nx]),
            np.array([tx, ty, rx * ty - ry * tx]),
        )


def contact_jacobian(contacts) -> np.ndarray:
    """3 x 2N map from stacked forces (normals then tangentials) to a wrench."""
    cols_n, cols_t = [], []
    for c in contacts:
        ncol, tcol = c.columns()
        cols_n.append(ncol)
        cols_t.append(tcol)
    return np.column_stack(cols_n + cols_t)


class InteractionMode:
    """A fixed set of contacts acting together."""

    def __init__(self, contacts) -> None:
        self.contacts = tuple(contacts)
        if not self.contacts:
            raise ValueError("mode requires at least one contact")
        self.jacobian = contact_jacobian(self.contacts)
        self._lp = None
        self._wrench_set = None

    def __len__(self) -> int:
        return len(self.contacts)

    def _lp_parts(self, mu: float):
        """Constant LP pieces for min ||J F + eta||_1 over the friction cones.

        Variables: [fn (N), ftp (N), ftm (N), r (3)], tangential split into a
        nonnegative pair, r the residual bound.
        """
        if self._lp is not None:
            return self._lp
        N = len(self.contacts)
        J = self.jacobian
        Jn, Jt = J[:, :N], J[:, N:]
        nvar = 3 * N + 3
        A = np.zeros((2 * N + 6, nvar))
        # Coulomb: ftp_i <= mu fn_i, ftm_i <= mu fn_i
        for i in range(N):
            A[i, i] = -mu
            A[i, N + i] = 1.0
            A[N + i, i] = -mu
            A[N + i, 2 * N + i] = 1.0
        # residual: -r <= J F + eta <= r
        A[2 * N : 2 * N + 3, :N] = Jn
        A[2 * N : 2 * N + 3, N : 2 * N] = Jt
        A[2 * N : 2 * N + 3, 2 * N : 3 * N] = -Jt
        A[2 * N : 2 * N + 3, 3 * N :] = -np.eye(3)
        A[2 * N + 3 :, : 3 * N] = -A[2 * N : 2 * N + 3, : 3 * N]
        A[2 * N + 3 :, 3 * N :] = -np.eye(3)
        cost = np.zeros(nvar)
        cost[3 * N :] = 1.0
        bounds = (
            [(0.0, c.push_max) for c in self.contacts]
            + [(0.0, mu * c.push_max) for c in self.contacts] * 2
            + [(0.0, None)] * 3
        )
        self._lp = (cost, A, bounds)
        return self._lp

    def wrench_set(self, intr: ObjectIntrinsics) -> "ModeWrenchSet":
        if self._wrench_set is None:
            self._wrench_set = ModeWrenchSet(self, intr)
        return self._wrench_set


def _solve_balance(intr: ObjectIntrinsics, mode: InteractionMode, eta: np.ndarray):
    cost, A, bounds = mode._lp_parts(intr.mu_contact)
    N = len(mode.contacts)
    b = np.zeros(2 * N + 6)
    b[2 * N : 2 * N + 3] = -eta
    b[2 * N + 3 :] = eta
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if not res.success:  # cone LPs are always feasible (F=0)
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    F = res.x[:N], res.x[N : 2 * N] - res.x[2 * N : 3 * N]
    q = mode.jacobian[:, :N] @ F[0] + mode.jacobian[:, N:] @ F[1]
    return float(res.fun), q, np.concatenate(F)


def feasibility(intr: ObjectIntrinsics, mode: InteractionMode, p) -> float:
    """Minimum L1 force-balance residual for body velocity p under the mode."""
    return _solve_balance(intr, mode, friction_force(intr, p))[0]


def feasibility_project(intr: ObjectIntrinsics, mode: InteractionMode, p):
    """(residual, achievable wrench closest to -eta(p), stacked forces)."""
    return _solve_balance(intr, mode, friction_force(intr, p))


def velocity_allowed(
    intr: ObjectIntrinsics, mode: InteractionMode, p, tol: float = TOL_LP
) -> bool:
    return feasibility(intr, mode, p) <= tol


def direction_set(p, intr: ObjectIntrinsics | None = None) -> np.ndarray:
    """Six probe directions spanning +-3 axes around a main direction.

    p2 = e3 x p1, p3 = p1 x p2, then the three negations; a pure-rotation main
    direction degenerates, in which case p2 is the unit x axis. Each direction
    is scaled so ||diag(1,1,c^2) d|| = 1 (c from intr; c=1 when intr is None).
    """
    p1 = np.asarray(p, dtype=float)
    n = np.linalg.norm(p1)
    if n < 1e-15:
        raise ValueError("zero main direction")
    p1 = p1 / n
    if math.hypot(p1[0], p1[1]) < 1e-12:
        p2 = np.array([1.0, 0.0, 0.0])
    else:
        p2 = np.cross(np.array([0.0, 0.0, 1.0]), p1)
        p2 /= np.linalg.norm(p2)
    p3 = np.cross(p1, p2)
    p3 /= np.linalg.norm(p3)
    dirs = np.array([p1, p2, p3, -p1, -p2, -p3])
    c2 = 1.0 if intr is None else intr.c * intr.c
    scale = np.sqrt(dirs[:, 0] ** 2 + dirs[:, 1] ** 2 + (c2 * dirs[:, 2]) ** 2)
    return dirs / scale[:, None]


def multi_feasibility(
    intr: ObjectIntrinsics,
    mode: InteractionMode,
    p,
    weights=DEFAULT_DIRECTION_WEIGHTS,
) -> float:
    """Weighted feasibility over the probe directions; zero-weight probes skipped."""
    dirs = direction_set(p, intr)
    total = 0.0
    for w, d in zip(weights, dirs):
        if w == 0.0:
            continue
        total += w * feasibility(intr, mode, d)
    return total


# ---------------------------------------------------------------------------
# fast membership form of the allowed-velocity set


@lru_cache(maxsize=4)
def _fibonacci_sphere(n: int) -> np.ndarray:
    """Near-uniform unit directions; n ~ 41k gives ~1 degree mean spacing."""
    i = np.arange(n, dtype=float) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


class ModeWrenchSet:
    """Halfspace form of the wrenches a mode can exert.

    The reachable set is the Minkowski sum of per-contact friction-cone
    triangles (vertices 0, f(n + mu t), f(n - mu t)); a velocity p is allowed
    exactly when -eta(p) lies inside. Degenerate (rank < 3) sums are handled
    by projecting onto their span. Used as the simulator's fast allowed check;
    the LP in feasibility() is the reference semantics.
    """

    SPHERE_SAMPLES = 41000

    def __init__(self, mode: InteractionMode, intr: ObjectIntrinsics) -> None:
        self.intr = intr
        mu = intr.mu_contact
        vert_groups = []
        for c in mode.contacts:
            ncol, tcol = c.columns()
            vert_groups.append(
                np.array(
                    [
                        np.zeros(3),
                        c.push_max * (ncol + mu * tcol),
                        c.push_max * (ncol - mu * tcol),
                    ]
                )
            )
        verts = vert_groups[0]
        for g in vert_groups[1:]:
            verts = (verts[:, None, :] + g[None, :, :]).reshape(-1, 3)
        self._build(np.unique(np.round(verts, 12), axis=0))
        self._dir_samples = None
        self._sample_mask = None

    def _build(self, verts: np.ndarray) -> None:
        center = verts.mean(axis=0)
        U, S, Vt = np.linalg.svd(verts - center, full_matrices=False)
        scale = max(float(S[0]), 1e-12)
        rank = int(np.sum(S > 1e-9 * scale))
        self.rank = rank
        self.center = center
        self.basis = Vt[:rank].T if rank else np.zeros((3, 0))
        if rank == 3:
            from scipy.spatial import ConvexHull

            hull = ConvexHull(verts)
            self.A = hull.equations[:, :3]
            self.b = -hull.equations[:, 3]
            return
        proj = (verts - center) @ self.basis
        if rank == 2:
            from scipy.spatial import ConvexHull

            hull = ConvexHull(proj)
            self.A2 = hull.equations[:, :2]
            self.b2 = -hull.equations[:, 2]
        elif rank == 1:
            self.lo = float(proj.min())
            self.hi = float(proj.max())

    def contains(self, q, tol: float = 1e-7) -> bool:
        q = np.asarray(q, dtype=float)
        if self.rank == 3:
            return bool(np.all(self.A @ q <= self.b + tol))
        d = q - self.center
        coords = d @ self.basis
        resid = d - self.basis @ coords
        if float(np.dot(resid, resid)) > tol * tol:
            return False
        if self.rank == 2:
            return bool(np.all(self.A2 @ coords <= self.b2 + tol))
        if self.rank == 1:
            return self.lo - tol <= float(coords[0]) <= self.hi + tol
        return True

    def contains_many(self, Q: np.ndarray, tol: float = 1e-7) -> np.ndarray:
        if self.rank == 3:
            return np.all(Q @ self.A.T <= self.b + tol, axis=1)
        D = Q - self.center
        coords = D @ self.basis
        resid = D - coords @ self.basis.T
        ok = np.einsum("ij,ij->i", resid, resid) <= tol * tol
        if self.rank == 2:
            ok &= np.all(coords @ self.A2.T <= self.b2 + tol, axis=1)
        elif self.rank == 1:
            ok &= (coords[:, 0] >= self.lo - tol) & (coords[:, 0] <= self.hi + tol)
        return ok

    def _weighted_to_wrench(self, u: np.ndarray) -> np.ndarray:
        """Unit weighted direction (vx, vy, c*om) -> -eta of that velocity."""
        f, c = self.intr.f_max, self.intr.c
        if u.ndim == 1:
            return f * np.array([u[0], u[1], c * u[2]])
        return f * np.column_stack([u[:, 0], u[:, 1], c * u[:, 2]])

    def allowed(self, p, tol: float = 1e-7) -> bool:
        """Fast membership test; equivalent to feasibility(p) ~ 0."""
        vx, vy, om = float(p[0]), float(p[1]), float(p[2])
        c = self.intr.c
        n = math.hypot(vx, vy, c * om)
        if n < 1e-15:
            return True
        u = np.array([vx / n, vy / n, c * om / n])
        return self.contains(self._weighted_to_wrench(u), tol)

    def _samples(self):
        """Candidate weighted unit directions and their allowed mask.

        Full-rank sets sample the whole sphere; rank-2 sets sample the circle
        of directions inside the wrench plane (membership elsewhere is measure
        zero); rank-1 sets have two candidates.
        """
        if self._sample_mask is None:
            if self.rank == 3:
                S = _fibonacci_sphere(self.SPHERE_SAMPLES)
            elif self.rank == 2:
                theta = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
                d = np.outer(np.cos(theta), self.basis[:, 0]) + np.outer(
                    np.sin(theta), self.basis[:, 1]
                )
                # wrench direction -> weighted velocity direction, then unit
                c = self.intr.c
                S = np.column_stack([d[:, 0], d[:, 1], d[:, 2] / c])
                S /= np.linalg.norm(S, axis=1)[:, None]
            elif self.rank == 1:
                c = self.intr.c
                d = self.basis[:, 0]
                S = np.array([[d[0], d[1], d[2] / c], [-d[0], -d[1], -d[2] / c]])
                S /= np.linalg.norm(S, axis=1)[:, None]
            else:
                S = np.zeros((0, 3))
            self._dir_samples = S
            self._sample_mask = (
                self.contains_many(self._weighted_to_wrench(S)) if len(S) else np.zeros(0, bool)
            )
        return self._dir_samples, self._sample_mask

    def project_direction(self, p_des) -> np.ndarray | None:
        """Allowed body-velocity direction nearest p_des on the weighted sphere.

        Sweep over ~1 degree samples, then bisection refinement along the
        geodesic toward p_des. Returns a unit-weighted-norm body velocity, or
        None when the mode allows no motion at all.
        """
        c = self.intr.c
        n = math.hypot(p_des[0], p_des[1], c * p_des[2])
        if n < 1e-15:
            return None
        u_des = np.array([p_des[0] / n, p_des[1] / n, c * p_des[2] / n])
        if self.contains(self._weighted_to_wrench(u_des)):
            return np.array([u_des[0], u_des[1], u_des[2] / c])
        S, mask = self._samples()
        if not mask.any():
            return None
        dots = S[mask] @ u_des
        u = S[mask][int(np.argmax(dots))]
        # walk the geodesic u -> u_des keeping the allowed endpoint
        lo, hi = 0.0, 1.0
        for _ in range(24):
            mid = 0.5 * (lo + hi)
            cand = (1.0 - mid) * u + mid * u_des
            cn = np.linalg.norm(cand)
            if cn < 1e-12:
                break
            cand = cand / cn
            if self.contains(self._weighted_to_wrench(cand)):
                lo = mid
            else:
                hi = mid
        best = (1.0 - lo) * u + lo * u_des
        best /= np.linalg.norm(best)
        return np.array([best[0], best[1], best[2] / c])
