import math

import numpy as np
import pytest

from pushcraft.geometry import Polygon, SE2State, Workspace
from pushcraft.statics import TOL_LP, ObjectIntrinsics, feasibility
from pushcraft.modegen import (
    ContactCandidateSet,
    InsufficientModesError,
    boundary_point,
    candidate_contacts,
    check_sufficient,
    key_velocities,
    mg_so,
    sata,
)


def unit_square():
    return Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])


def square_setup():
    sq = unit_square()
    intr = ObjectIntrinsics.from_polygon(sq, mass=1.0, mu_ground=0.5, mu_contact=0.3)
    cands = candidate_contacts(sq, robot_radius=0.1, push_max=2.0 * intr.f_max)
    return sq, intr, cands


def rect_ends_setup():
    # long rectangle, contacts restricted to the short ends: lateral pushing
    # is impossible because contact friction is too weak to drag sideways
    rect = Polygon([(-0.5, -0.15), (0.5, -0.15), (0.5, 0.15), (-0.5, 0.15)])
    intr = ObjectIntrinsics.from_polygon(rect, mass=1.0, mu_ground=0.5, mu_contact=0.1)
    cands = candidate_contacts(rect, robot_radius=0.05, push_max=1.2 * intr.f_max)
    ends = tuple(c for c in cands.contacts if abs(c.normal[0]) > 0.5)
    cands_e = ContactCandidateSet(ends, cands.perimeter, cands.robot_radius, cands.segment_len)
    return rect, intr, cands_e


def test_candidates_square_layout():
    sq, intr, cands = square_setup()
    assert len(cands) == 20  # perimeter 4, one robot diameter per segment
    params = [c.param for c in cands.contacts]
    assert params == sorted(params)
    for c in cands.contacts:
        pt, nrm = np.array(c.point), np.array(c.normal)
        # inward normal points at the interior
        assert sq.contains_point(pt + 1e-6 * nrm)
        assert not sq.contains_point(pt - 1e-6 * nrm)
    # every edge center is a candidate
    centers = {(0.0, -0.5), (0.5, 0.0), (0.0, 0.5), (-0.5, 0.0)}
    pts = {tuple(np.round(c.point, 9)) for c in cands.contacts}
    assert centers <= pts


def test_candidates_reflex_corner_dropped():
    lshape = Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    r = 0.3
    cands = candidate_contacts(lshape, robot_radius=r, push_max=5.0)
    for c in cands.contacts:
        center = np.array(c.point) - r * np.array(c.normal)
        assert lshape.distance_to_point(center) >= r - 1e-6


def test_candidates_blocked_by_obstacle():
    sq, intr, _ = square_setup()
    bounds = Polygon([(-5, -5), (5, -5), (5, 5), (-5, 5)])
    wall = Polygon([(0.55, -1.0), (0.75, -1.0), (0.75, 1.0), (0.55, 1.0)])
    ws = Workspace(bounds, [wall])
    free = candidate_contacts(sq, 0.1, 5.0)
    blocked = candidate_contacts(sq, 0.1, 5.0, workspace=ws, poses=[SE2State(0, 0, 0)])
    lost = {tuple(np.round(c.point, 9)) for c in free.contacts} - {
        tuple(np.round(c.point, 9)) for c in blocked.contacts
    }
    assert lost  # the wall eats the right-edge placements
    assert all(x > 0.4 for x, _y in lost)


def test_ring_distance_wraps():
    sq, intr, cands = square_setup()
    first, last = cands.contacts[0], cands.contacts[-1]
    d = cands.ring_distance(first, last)
    assert d == pytest.approx(0.2, abs=1e-9)  # adjacent across the seam
    assert cands.spacing_ok([first, last])  # exactly one diameter, allowed
    near = type(first)(point=first.point, normal=first.normal, push_max=1.0, param=0.995)
    assert cands.ring_distance(first, near) == pytest.approx(0.12, abs=1e-9)
    assert not cands.spacing_ok([first, near])
    assert cands.spacing_ok([cands.contacts[0], cands.contacts[10]])


def test_boundary_point_midedge():
    sq = unit_square()
    pt, nrm = boundary_point(sq, 0.125)  # halfway along the bottom edge
    assert np.allclose(pt, [0.0, -0.5], atol=1e-12)
    assert np.allclose(nrm, [0.0, 1.0], atol=1e-12)


def test_mg_so_square_sparsity_and_top_mode():
    sq, intr, cands = square_setup()
    main = np.array([0.0, 1.0, 0.0])
    res = mg_so(intr, cands, main, n_robots=2, n_modes=5, seed=3)
    assert len(res.modes) == 5
    row_inf = np.max(np.abs(res.force_matrix), axis=1)
    zero_frac = np.mean(row_inf < TOL_LP)
    assert zero_frac >= 0.6
    assert np.all(res.residuals <= TOL_LP)  # generous push balances all probes
    assert feasibility(intr, res.modes[0], main) <= TOL_LP
    for m in res.modes:
        assert cands.spacing_ok(m.contacts)


def test_mg_so_weak_push_leaves_residual():
    sq, intr, cands = square_setup()
    # 0.1 f_max per contact: one edge plus all side shear sums below f_max
    weak = ContactCandidateSet(
        tuple(
            type(c)(point=c.point, normal=c.normal, push_max=0.1 * intr.f_max, param=c.param)
            for c in cands.contacts
        ),
        cands.perimeter,
        cands.robot_radius,
        cands.segment_len,
    )
    res = mg_so(intr, weak, np.array([0.0, 1.0, 0.0]), n_robots=2, seed=0)
    assert res.residuals[0] > 0.5
    assert len(res.modes) >= 1


def test_mg_so_deterministic():
    sq, intr, cands = square_setup()
    main = np.array([1.0, 0.0, 0.0])
    a = mg_so(intr, cands, main, n_robots=2, n_modes=5, seed=11)
    b = mg_so(intr, cands, main, n_robots=2, n_modes=5, seed=11)
    pts_a = [tuple(c.point for c in m.contacts) for m in a.modes]
    pts_b = [tuple(c.point for c in m.contacts) for m in b.modes]
    assert pts_a == pts_b
    assert np.array_equal(a.force_matrix, b.force_matrix)


def test_key_velocities_unit_weighted_norm():
    sq, intr, _ = square_setup()
    keys = key_velocities(intr)
    assert keys.shape == (6, 3)
    for k in keys:
        assert math.hypot(k[0], k[1], intr.c * k[2]) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(keys[0] + keys[1], 0.0)
    assert np.allclose(keys[2] + keys[3], 0.0)
    assert np.allclose(keys[4] + keys[5], 0.0)


def test_sufficient_square_two_robots():
    sq, intr, cands = square_setup()
    rep = check_sufficient(intr, cands, n_robots=2)
    assert rep.sufficient and rep.complete
    assert all(w.residual <= TOL_LP for w in rep.direct)


def test_single_robot_insufficient():
    sq, intr, cands = square_setup()
    rep = check_sufficient(intr, cands, n_robots=1)
    assert not rep.sufficient


def test_rect_ends_needs_composites():
    rect, intr, cands = rect_ends_setup()
    rep = check_sufficient(intr, cands, n_robots=2)
    assert not rep.sufficient
    assert rep.complete
    lateral = {2, 3}  # signed y keys
    assert set(rep.composite.keys()) == lateral
    for w in rep.composite.values():
        assert feasibility(intr, w.mode_a, np.array(w.velocity_a)) <= TOL_LP
        assert feasibility(intr, w.mode_b, np.array(w.velocity_b)) <= TOL_LP
        # the two blends really average back to the lateral axis
        c = intr.c
        va, vb = np.array(w.velocity_a), np.array(w.velocity_b)
        wa = np.array([va[0], va[1], c * va[2]])
        wb = np.array([vb[0], vb[1], c * vb[2]])
        mix = (wa + wb) / (2.0 * math.cos(w.blend_angle))
        assert abs(mix[0]) < 1e-8 and abs(mix[2]) < 1e-8
        assert abs(abs(mix[1]) - 1.0) < 1e-8


def test_axis_decomposition_exact():
    sq, intr, _ = square_setup()
    c = intr.c
    keys = key_velocities(intr)
    rng = np.random.default_rng(7)
    for _ in range(200):
        disp = rng.uniform(-1.0, 1.0, size=3)
        disp_w = np.array([disp[0], disp[1], c * disp[2]])
        recon = np.zeros(3)
        for axis in range(3):
            a = disp_w[axis]
            k = keys[2 * axis + (0 if a > 0 else 1)]
            recon += abs(a) * np.array([k[0], k[1], c * k[2]])
        assert np.allclose(recon, disp_w, atol=1e-9)


def test_sata_halving_convergence():
    rect, intr, cands = rect_ends_setup()
    rep = check_sufficient(intr, cands, n_robots=2)
    s0 = SE2State(0.0, 0.0, 0.0)
    s1 = SE2State(0.8, 0.35, 0.6)
    errors = {}
    for L in (4, 8, 16):
        r = sata(intr, rep, s0, s1, tolerance=1e-9, max_splits=L)
        assert r.splits == L
        errors[L] = r.hausdorff_error
        assert r.end_error <= 0.02
        assert len(r.arcs) == len(r.modes)
    assert errors[8] <= 0.75 * errors[4]
    assert errors[16] <= 0.75 * errors[8]


def test_sata_arcs_are_allowed():
    rect, intr, cands = rect_ends_setup()
    rep = check_sufficient(intr, cands, n_robots=2)
    r = sata(intr, rep, SE2State(0, 0, 0), SE2State(0.8, 0.35, 0.6), 1e-9, max_splits=8)
    for arc, mode in zip(r.arcs, r.modes):
        assert feasibility(intr, mode, np.array(arc.p_body)) <= 10 * TOL_LP
    # keyframes chain through the arc endpoints
    for arc, k0, k1 in zip(r.arcs, r.keyframes, r.keyframes[1:]):
        assert arc.start == k0
        end = arc.end
        assert math.hypot(end.x - k1.x, end.y - k1.y) < 1e-9


def test_sata_tolerance_stops_early():
    sq, intr, cands = square_setup()
    rep = check_sufficient(intr, cands, n_robots=2)
    assert rep.sufficient
    r = sata(intr, rep, SE2State(0, 0, 0), SE2State(0.6, 0.2, 0.4), tolerance=0.05)
    assert r.splits < 128
    assert r.hausdorff_error <= 0.05
    assert r.end_error <= 0.05


def test_sata_raises_when_incomplete():
    rect, intr, cands = rect_ends_setup()
    # one end only: nothing can ever push toward -x
    left = tuple(c for c in cands.contacts if c.point[0] < 0)
    cands_l = ContactCandidateSet(left, cands.perimeter, cands.robot_radius, cands.segment_len)
    rep = check_sufficient(intr, cands_l, n_robots=2)
    assert not rep.complete
    with pytest.raises(InsufficientModesError):
        sata(intr, rep, SE2State(0, 0, 0), SE2State(-0.5, 0.1, 0.0), 0.02)
