from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_bvp

from netflow.errors import FitFailure, PreconditionError
from netflow.expander import (
    ExpanderArc,
    asymptotic_fit,
    fan_g_length,
    geodesic_bvp,
    network_g_length,
    patch_network,
    soleq_residual,
    soliton_residual,
    solve_soliton,
    truncate_and_scale,
)
from netflow.fd import derivative
from netflow.geometry import hausdorff, rotation
from netflow.network import Fan, check_regular
from netflow.resolution import parse_descriptor


def _points(sol):
    return [a.points for a in sol.arcs]


def _within(points, r):
    return points[np.linalg.norm(points, axis=1) <= r]


def _collocation_geodesic(a, b):
    """Geodesic of exp(|x|^2)|dx|^2 between fixed points by collocation."""

    def rhs(t, u, p):
        x, y, th = u
        return p[0] * np.vstack([np.cos(th), np.sin(th), -x * np.sin(th) + y * np.cos(th)])

    def bc(ua, ub, p):
        return np.array([ua[0] - a[0], ua[1] - a[1], ub[0] - b[0], ub[1] - b[1]])

    t = np.linspace(0.0, 1.0, 200)
    mid = 0.2 * (a + b)
    guess = np.where(t[:, None] < 0.5, a + (mid - a) * 2 * t[:, None], mid + (b - mid) * (2 * t[:, None] - 1))
    d = np.gradient(guess, axis=0)
    th = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    sol = solve_bvp(rhs, bc, t, np.vstack([guess.T, th]), p=[np.linalg.norm(b - a)], tol=1e-10,
                    max_nodes=100000)
    assert sol.status == 0
    return sol.sol(np.linspace(0.0, 1.0, 4001))[:2].T


# geodesic_bvp -----------------------------------------------------------------------


def test_opposite_angles_give_diameter():
    arc = geodesic_bvp(0.3, 0.3 + math.pi)
    d = np.array([math.cos(0.3), math.sin(0.3)])
    off = arc.points[:, 0] * d[1] - arc.points[:, 1] * d[0]
    assert np.abs(off).max() < 1e-10


def test_right_angle_geodesic_is_symmetric():
    arc = geodesic_bvp(0.0, math.pi / 2)
    mirrored = arc.points[::-1, ::-1]
    assert np.abs(mirrored - arc.points).max() <= 1e-8


def test_right_angle_geodesic_matches_collocation():
    arc = geodesic_bvp(0.0, math.pi / 2)
    inside = _within(arc.points, 3.0)
    ref = _collocation_geodesic(inside[0], inside[-1])
    # linear interpolation between samples limits agreement to about h^2 kappa / 8
    assert hausdorff([ref], [inside], spacing=1e-4) < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.5, 2.8), st.floats(-math.pi, math.pi))
def test_geodesic_rotation_equivariance(theta, gap, phi):
    base = geodesic_bvp(theta, theta + gap)
    turned = geodesic_bvp(theta + phi, theta + gap + phi)
    assert np.abs(turned.points - base.points @ rotation(phi).T).max() <= 1e-10


def test_equal_angles_rejected():
    with pytest.raises(PreconditionError):
        geodesic_bvp(1.0, 1.0 + 2 * math.pi)


# soliton_residual -------------------------------------------------------------------


def test_residual_of_straight_ray_vanishes():
    s = np.linspace(0.0, 4.0, 41)
    d = np.array([0.6, 0.8])
    arc = ExpanderArc(s, s[:, None] * d, direction=d)
    # roundoff of the nine-point second difference
    assert soliton_residual(arc) < 1e-10


def test_residual_of_unit_circle_is_two():
    th = np.linspace(0.0, 2 * math.pi, 721)
    arc = ExpanderArc(th, np.column_stack([np.cos(th), np.sin(th)]), kind="internal")
    assert soliton_residual(arc) == pytest.approx(2.0, abs=1e-8)


def test_residual_needs_three_samples():
    arc = ExpanderArc(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(PreconditionError):
        soliton_residual(arc)


# solve_soliton ------------------------------------------------------------------------


def test_symmetric_triod_is_the_fan(triod_soliton):
    sol = triod_soliton
    for leaf, ai in enumerate(sol.leaf_arcs):
        arc = sol.arcs[ai]
        d = sol.fan.directions[leaf]
        assert np.abs(arc.points - arc.s[:, None] * d).max() <= 1e-10
        # the finite-difference residual bottoms out at roundoff on the fine inner grid
        assert soliton_residual(arc) < 1e-9
    assert sol.junction_balance() <= 1e-12


@pytest.mark.parametrize("name", ["cross_soliton", "cross_soliton_other", "triod_soliton"])
def test_solver_postconditions(name, request):
    sol = request.getfixturevalue(name)
    assert sol.junction_balance() <= 1e-8
    for arc in sol.arcs:
        assert soliton_residual(arc) <= 1e-8
        if arc.kind == "external":
            assert soleq_residual(arc) <= 1e-8
            # |eta'| - 1 decays like exp(-s^2 / 2), about 3e-4 at s = 4
            speed = np.linalg.norm(derivative(arc.s, arc.points, 1, 9), axis=1)
            far = np.abs(speed[arc.s >= 3.0] - 1.0)
            assert far[-1] < 1e-4
            assert np.all(np.diff(far) <= 1e-10)


def test_cross_internal_edge_on_bisector(cross_soliton):
    (ai,) = cross_soliton.internal_arcs()
    pts = cross_soliton.arcs[ai].points
    # leaves 1,2 sit at 45 and 135 degrees, so the pairing 12|34 has a vertical edge
    assert np.abs(pts[:, 0]).max() < 1e-9
    assert np.ptp(pts[:, 1]) > 0.1


def test_cross_is_mirror_symmetric(cross_soliton):
    pts = _points(cross_soliton)
    for flip in (np.diag([-1.0, 1.0]), np.diag([1.0, -1.0])):
        assert hausdorff(pts, [p @ flip for p in pts], spacing=1e-3) < 1e-6


def test_cross_topologies_differ(cross_soliton, cross_soliton_other):
    assert hausdorff(_points(cross_soliton), _points(cross_soliton_other), spacing=1e-3) > 0.1


def test_cross_other_is_rotated_copy(cross_soliton, cross_soliton_other):
    turned = [p @ rotation(math.pi / 2).T for p in _points(cross_soliton)]
    assert hausdorff(turned, _points(cross_soliton_other), spacing=1e-3) < 1e-6


def test_disconnected_cross_is_two_disjoint_arcs(cross_disconnected):
    sol = cross_disconnected
    pieces = {}
    for j in sol.junctions:
        assert j.kind == "pass"
    for n, j in enumerate(sol.junctions):
        pieces[n] = np.vstack([sol.arcs[ai].points for ai, _ in j.ends])
    a, b = pieces.values()
    gap = np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2))
    assert gap > 0.1
    for arc in sol.arcs:
        assert soliton_residual(arc) <= 1e-8


def test_solitons_shorter_than_fan(cross_soliton, cross_soliton_other):
    R = 3.5
    for sol in (cross_soliton, cross_soliton_other):
        assert network_g_length(sol, R) < fan_g_length(sol.fan, R) - 1e-3


@pytest.mark.slow
@settings(max_examples=3, deadline=None)
@given(st.floats(-math.pi, math.pi))
def test_soliton_rotation_equivariance(phi):
    fan = Fan.from_angles(np.radians([40.0, 130.0, 230.0, 320.0]))
    desc = parse_descriptor("12|34", 4)
    base = solve_soliton(fan, desc)
    turned = solve_soliton(fan.rotated(phi), desc)
    for a, b in zip(base.rotated(phi).arcs, turned.arcs):
        assert np.abs(a.points - b.points).max() <= 1e-8


def test_rotation_equivariance_fixed_angle():
    desc = parse_descriptor("12|34", 4)
    fan = Fan.from_angles(np.radians([40.0, 130.0, 230.0, 320.0]))
    base = solve_soliton(fan, desc)
    turned = solve_soliton(fan.rotated(0.37), desc)
    for a, b in zip(base.rotated(0.37).arcs, turned.arcs):
        assert np.abs(a.points - b.points).max() <= 1e-8


def test_topology_must_match_fan(cross_fan):
    with pytest.raises(PreconditionError):
        solve_soliton(cross_fan, parse_descriptor("123", 3))


# asymptotic_fit ------------------------------------------------------------------------


def test_fit_of_straight_ray():
    s = np.linspace(0.0, 4.0, 81)
    d = np.array([0.6, 0.8])
    a, rep = asymptotic_fit(ExpanderArc(s, s[:, None] * d, direction=d))
    assert np.array_equal(a, d) or np.abs(a - d).max() < 1e-15
    assert rep.slope == -math.inf


@pytest.mark.parametrize("name", ["cross_soliton", "cross_soliton_other"])
def test_cross_external_arcs_decay(name, request):
    sol = request.getfixturevalue(name)
    for leaf, ai in enumerate(sol.leaf_arcs):
        a, rep = asymptotic_fit(sol.arcs[ai])
        ray = sol.fan.directions[leaf]
        ang = math.atan2(a[0] * ray[1] - a[1] * ray[0], a @ ray)
        assert abs(ang) <= 1e-4
        assert rep.slope <= -0.4


def test_growing_remainder_is_a_fit_failure():
    s = np.linspace(0.0, 4.0, 161)
    pts = np.column_stack([s, 1e-3 * s**3])
    with pytest.raises(FitFailure):
        asymptotic_fit(ExpanderArc(s, pts, direction=np.array([1.0, 0.0])))


# truncate_and_scale ---------------------------------------------------------------------


def test_triod_slice_is_scaled_triod(triod_soliton):
    t0 = 0.02
    lam = math.sqrt(2 * t0)
    patch = truncate_and_scale(triod_soliton, t0, 2.0 * lam)
    for c in patch.curves:
        d = c.points[-1] / np.linalg.norm(c.points[-1])
        off = c.points[:, 0] * d[1] - c.points[:, 1] * d[0]
        assert np.abs(off).max() < 1e-12
    assert check_regular(patch_network(patch)).regular


def test_normalization_slice_has_unit_scale(cross_soliton):
    patch = truncate_and_scale(cross_soliton, 0.5, 2.0)
    assert patch.scale == 1.0
    (ai,) = cross_soliton.internal_arcs()
    assert np.array_equal(patch.curves[ai].points, cross_soliton.arcs[ai].points)


def test_doubling_t0_scales_by_sqrt2(cross_soliton):
    a = truncate_and_scale(cross_soliton, 0.01, 0.5)
    b = truncate_and_scale(cross_soliton, 0.02, 0.5)
    (ai,) = cross_soliton.internal_arcs()
    assert b.scale / a.scale == pytest.approx(math.sqrt(2), rel=1e-15)
    assert np.abs(b.curves[ai].points - math.sqrt(2) * a.curves[ai].points).max() < 1e-15


def test_patch_counts_for_cross(cross_soliton):
    net = patch_network(truncate_and_scale(cross_soliton, 0.005, 0.3))
    assert len(net.curves) == 5
    assert check_regular(net, tol=1e-6).regular


def test_excision_radius_too_large(cross_soliton):
    with pytest.raises(ValueError):
        truncate_and_scale(cross_soliton, 0.005, 10.0)
