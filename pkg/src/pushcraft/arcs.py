"""Constant body-velocity arcs on SE(2).

A body velocity p = (vx, vy, omega) held for a duration traces a circular arc
(straight line when omega = 0). The closed forms here give the rolled end
state, the unique arc connecting two states with |heading change| < pi, the
arc's circle, and its generalized (mixed-unit) length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import SE2State, wrap_angle
from .statics import InteractionMode, ObjectIntrinsics, multi_feasibility

OMEGA_EPS = 1e-8
NOMINAL_SPEED = 0.5


@dataclass(frozen=True)
class ArcTransition:
    """One constant-velocity arc: start state, body velocity, duration."""

    start: SE2State
    p_body: tuple[float, float, float]
    duration: float

    @property
    def end(self) -> SE2State:
        return roll_arc(self.start, self.p_body, self.duration)

    def generalized_length(self, angle_weight: float) -> float:
        vx, vy, om = self.p_body
        return self.duration * math.hypot(vx, vy, angle_weight * om)

    def circle(self):
        """(center, radius) of the traced circle, None for straight motion."""
        vx, vy, om = self.p_body
        if abs(om) < OMEGA_EPS:
            return None
        psi = self.start.psi - math.pi / 2
        c, s = math.cos(psi), math.sin(psi)
        cx = self.start.x - (c * vx - s * vy) / om
        cy = self.start.y - (s * vx + c * vy) / om
        return np.array([cx, cy]), math.hypot(vx, vy) / abs(om)


def roll_arc(state: SE2State, p_body, duration: float) -> SE2State:
    """End state after holding body velocity p_body for duration."""
    vx, vy, om = float(p_body[0]), float(p_body[1]), float(p_body[2])
    psi0 = state.psi
    rot_angle = om * duration
    if abs(rot_angle) < OMEGA_EPS:
        c, s = math.cos(psi0), math.sin(psi0)
        return SE2State(
            state.x + (c * vx - s * vy) * duration,
            state.y + (s * vx + c * vy) * duration,
            wrap_angle(psi0 + rot_angle),
        )
    # integral of Rot(psi0 + om t) v dt
    a0 = psi0 - math.pi / 2
    a1 = a0 + rot_angle
    dxx = (math.cos(a1) - math.cos(a0)) / om
    dxy = (-math.sin(a1) + math.sin(a0)) / om
    dyx = (math.sin(a1) - math.sin(a0)) / om
    dyy = (math.cos(a1) - math.cos(a0)) / om
    return SE2State(
        state.x + dxx * vx + dxy * vy,
        state.y + dyx * vx + dyy * vy,
        wrap_angle(psi0 + rot_angle),
    )


def connect_arc(
    s0: SE2State, s1: SE2State, nominal_speed: float = NOMINAL_SPEED, angle_weight: float = 1.0
) -> ArcTransition:
    """The unique arc from s0 to s1 whose heading change lies in (-pi, pi).

    Duration is set so the weighted speed ||(v, angle_weight*omega)|| equals
    nominal_speed. A heading change of exactly -pi is nudged off the ambiguity.
    """
    dpsi = wrap_angle(s1.psi - s0.psi)
    if dpsi <= -math.pi + 1e-12:
        dpsi = -math.pi + 1e-9
    dx = s1.x - s0.x
    dy = s1.y - s0.y
    if abs(dpsi) < OMEGA_EPS:
        c, s = math.cos(s0.psi), math.sin(s0.psi)
        bx = c * dx + s * dy
        by = -s * dx + c * dy
    else:
        # solve [Rot(a1) - Rot(a0)]/dpsi * (v tbar) = (dx, dy)
        a0 = s0.psi - math.pi / 2
        a1 = a0 + dpsi
        m00 = (math.cos(a1) - math.cos(a0)) / dpsi
        m01 = (-math.sin(a1) + math.sin(a0)) / dpsi
        m10 = (math.sin(a1) - math.sin(a0)) / dpsi
        m11 = m00
        det = m00 * m11 - m01 * m10
        bx = (m11 * dx - m01 * dy) / det
        by = (-m10 * dx + m00 * dy) / det
    gen_len = math.hypot(bx, by, angle_weight * dpsi)
    if gen_len < 1e-15:
        return ArcTransition(s0, (0.0, 0.0, 0.0), 0.0)
    duration = gen_len / nominal_speed
    return ArcTransition(s0, (bx / duration, by / duration, dpsi / duration), duration)


def sample_arc(arc: ArcTransition, spacing: float, angle_weight: float = 1.0):
    """States along the arc at most `spacing` apart in generalized length."""
    total = arc.generalized_length(angle_weight)
    n = max(1, int(math.ceil(total / max(spacing, 1e-12))))
    return [roll_arc(arc.start, arc.p_body, arc.duration * k / n) for k in range(n + 1)]


def arc_loss(
    intr: ObjectIntrinsics,
    mode: InteractionMode,
    arc: ArcTransition,
    weights=None,
) -> float:
    """Feasibility-weighted cost of traversing the arc in the given mode."""
    if arc.duration == 0.0:
        return 0.0
    from .statics import DEFAULT_DIRECTION_WEIGHTS

    w = DEFAULT_DIRECTION_WEIGHTS if weights is None else weights
    jmf = multi_feasibility(intr, mode, arc.p_body, w)
    return jmf * arc.generalized_length(intr.c)
