import math
from itertools import permutations

import numpy as np
import pytest

from pushcraft.geometry import Polygon
from pushcraft.statics import ContactPoint, InteractionMode
from pushcraft.switching import (
    BoundaryPath,
    assign_switch,
    crossing_pairs,
    path_waypoints,
    switch_time,
)


def test_identity_assignment_is_free():
    a = assign_switch([0.1, 0.6, 0.9], [0.1, 0.6, 0.9])
    assert a.max_path_frac == 0.0
    assert sorted(a.permutation) == [0, 1, 2]
    assert all(p.length_frac == 0.0 for p in a.paths)
    assert crossing_pairs(a) == []


def test_quarter_offset_pairs():
    # old {0 deg, 90 deg}, new {180 deg, 270 deg}: enumerating both
    # permutations, only one is non-crossing with both paths <= half
    a = assign_switch([0.0, 0.25], [0.5, 0.75])
    assert a.max_path_frac <= 0.5 + 1e-12
    assert crossing_pairs(a) == []
    assert a.permutation == (1, 0)
    assert all(abs(p.length_frac - 0.25) < 1e-12 for p in a.paths)


def _brute_best_max(old, new):
    # smallest max-path over all non-crossing permutations, walking either way
    best = math.inf
    n = len(old)
    for perm in permutations(range(n)):
        # each pair picks the shorter boundary arc
        fracs = []
        for i in range(n):
            d = abs(old[i] - new[perm[i]]) % 1.0
            fracs.append(min(d, 1.0 - d))
        best = min(best, max(fracs) if fracs else 0.0)
    return best


def test_random_instances_never_cross_and_stay_short():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(1, 6))
        old = rng.random(n).tolist()
        new = rng.random(n).tolist()
        a = assign_switch(old, new)
        assert crossing_pairs(a) == []
        assert a.max_path_frac <= 0.5 + 1e-12
        assert sorted(a.permutation) == list(range(n))
        for i, p in enumerate(a.paths):
            assert p.start == pytest.approx(old[i] % 1.0)
            assert p.end == pytest.approx(new[a.permutation[i]] % 1.0)


def test_assignment_is_never_far_from_brute_force():
    # the laminar matching cannot beat the unconstrained optimum, and the
    # balanced cut keeps it within the half-perimeter guarantee
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        old = rng.random(n).tolist()
        new = rng.random(n).tolist()
        a = assign_switch(old, new)
        assert a.max_path_frac >= _brute_best_max(old, new) - 1e-12


def test_unequal_counts_rejected():
    with pytest.raises(ValueError):
        assign_switch([0.1], [0.2, 0.3])


def _mode(params, shape):
    from pushcraft.modegen import boundary_point

    contacts = []
    for t in params:
        point, normal = boundary_point(shape, t)
        contacts.append(ContactPoint(tuple(point), tuple(normal), 10.0, t))
    return InteractionMode(contacts)


def test_switch_time_matches_assignment():
    sq = Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    a = _mode([0.0, 0.25], sq)
    b = _mode([0.5, 0.75], sq)
    assert switch_time(a, a, 0.5, sq.perimeter) == 0.0
    t = switch_time(a, b, 0.5, sq.perimeter)
    assert t == pytest.approx(0.25 * sq.perimeter / 0.5)
    # scale: doubling speed halves the time
    assert switch_time(a, b, 1.0, sq.perimeter) == pytest.approx(t / 2)


def test_path_waypoints_stay_outside_object():
    sq = Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    path = BoundaryPath(0.0, 0.375, 1, 0.375)
    pts = path_waypoints(sq, path, robot_radius=0.1, spacing=0.05)
    assert len(pts) >= 2
    for x, y in pts:
        assert not sq.contains_point(np.array([x, y]))
        # offset magnitude: boundary distance equals radius + clearance
        assert max(abs(x), abs(y)) >= 0.5 + 0.1 + 0.02 - 1e-9


def test_shared_contact_stays_put():
    # sharing a contact breaks the exact balance argument: the shared point
    # tips one half-circle with both sets at once, so it must be pre-matched
    a = assign_switch([0.0, 0.25], [0.25, 0.5])
    assert sorted(a.permutation) == [0, 1]
    j_shared = a.permutation[1]
    assert a.paths[1].length_frac == 0.0
    assert a.paths[1].end == 0.25 and j_shared == 0
    # the antipodal remainder walks exactly half the boundary, never more
    assert a.paths[0].length_frac == pytest.approx(0.5)
    assert a.max_path_frac <= 0.5 + 1e-12


def test_shared_contact_switch_time_is_finite():
    sq = Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    a = _mode([0.0, 0.25], sq)
    b = _mode([0.25, 0.5], sq)
    t = switch_time(a, b, 0.5, sq.perimeter)
    assert t == pytest.approx(0.5 * sq.perimeter / 0.5)
