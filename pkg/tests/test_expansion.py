from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netflow.errors import DomainError, InversionFailure, PreconditionError
from netflow.expansion import (
    CHARTS,
    apply_Lj,
    assemble_Q,
    build_expansion,
    circular_jets,
    defect_order,
    degree,
    junction_chart_eval,
    junction_chart_invert,
    junction_chart_jacobian,
    lift_field,
    lifted_flow_residual,
    lifted_heat_residual,
    parity_ok,
    polynomial_Lj,
    projective_derivatives,
    solve_Lj,
    straight_jets,
    vpoly,
    vpoly_eval,
    vzero,
    write_defect_csv,
)
from netflow.fd import derivative

from oracles import _padd, _pder, _pmul, _strip, brute_force_Q


def same(u, v):
    return all(_strip(list(a)) == _strip(list(b)) for a, b in zip(u, v))


fracs = st.fractions(min_value=-3, max_value=3, max_denominator=7)
PYTHAGOREAN = [(Fraction(3, 5), Fraction(4, 5)), (Fraction(-5, 13), Fraction(12, 13)),
               (Fraction(8, 17), Fraction(-15, 17)), (Fraction(1), Fraction(0))]


@st.composite
def random_jets(draw, j):
    a = draw(st.sampled_from(PYTHAGOREAN + [(Fraction(1, 2), Fraction(2, 3))]))
    jets = [vpoly([(0, 0), a])]
    for i in range(1, j):
        rows = [(draw(fracs), draw(fracs)) for _ in range(i + 2)]
        jets.append(vpoly(rows))
    return jets


# Q_j ------------------------------------------------------------------------------


def test_Q1_vanishes_over_straight_background():
    jets = [vpoly([(0, 0), (Fraction(3, 5), Fraction(4, 5))])]
    assert same(assemble_Q(1, jets), vzero())


def test_Q2_structure():
    a = (Fraction(3, 5), Fraction(4, 5))
    eta1 = vpoly([(1, -2), (0, 0), (Fraction(1, 3), Fraction(5, 2))])
    Q = assemble_Q(2, [vpoly([(0, 0), a]), eta1])
    d1 = [_pder(c) for c in eta1]
    dot = _padd(_pmul([a[0]], d1[0]), _pmul([a[1]], d1[1]))
    expected = tuple(_strip(_pmul(_pder(d1[c]), [-2 * x for x in dot])) for c in range(2))
    assert same(Q, expected)
    assert degree(Q) <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5).flatmap(lambda j: st.tuples(st.just(j), random_jets(j))))
def test_assemble_Q_matches_series_oracle(case):
    j, jets = case
    Q = assemble_Q(j, jets)
    assert same(Q, brute_force_Q(j, jets))
    assert degree(Q) <= j - 1


def test_assemble_Q_missing_jet():
    with pytest.raises(PreconditionError):
        assemble_Q(3, [vpoly([(0, 0), (1, 0)])])


# L_j solves ----------------------------------------------------------------------


def test_solve_L1_polynomial_part():
    sol = solve_Lj(1, vzero(), (1, 1), (0.3, -0.2))
    assert same(sol.poly, vpoly([(1, 1), (0, 0), (1, 1)]))
    assert np.allclose(sol.values()[0], [0.3, -0.2], atol=1e-13)
    assert sol.residual(vzero()) <= 1e-10


@pytest.mark.parametrize("j", [1, 2, 3])
def test_solve_Lj_with_decaying_forcing(j):
    R = vpoly([(Fraction(1, 2), -1)]) if j > 1 else vzero()
    forcing = lambda s: np.stack([np.exp(-s * s), s * np.exp(-s * s / 2)], axis=-1)
    sol = solve_Lj(j, R, (Fraction(1, 3), -2), (0.1, 0.4), R_exp=forcing)
    assert np.allclose(sol.values()[0], [0.1, 0.4], atol=1e-12)
    assert sol.residual(R) <= 1e-10
    again = solve_Lj(j, R, (Fraction(1, 3), -2), (0.1, 0.4), R_exp=forcing)
    assert np.abs(again.values() - sol.values()).max() <= 1e-12
    top = sol.poly
    assert all(c == 0 for c in (top[0][j] if j < len(top[0]) else 0, top[1][j] if j < len(top[1]) else 0))


def test_polynomial_Lj_rejects_high_degree_forcing():
    with pytest.raises(PreconditionError):
        polynomial_Lj(2, vpoly([(0, 0), (0, 0), (1, 0)]), (1, 0))


def test_intertwining():
    # d/ds L_j u == L_{j-1} u' on a smooth sample, checked by finite differences
    s = np.linspace(0.0, 3.0, 601)
    u = np.sin(2 * s) + np.exp(-s * s) * s ** 3

    def L(j, f):
        return derivative(s, f, 2) + s * derivative(s, f, 1) - (j + 1) * f

    j = 3
    lhs = derivative(s, L(j, u), 1)
    rhs = L(j - 1, derivative(s, u, 1))
    assert np.abs(lhs - rhs)[20:-20].max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(PYTHAGOREAN), st.lists(st.tuples(fracs, fracs), min_size=3, max_size=3))
def test_straight_jets_degree_and_parity(a, lead):
    jets = straight_jets(a, [a] + lead, 3)
    for j, p in enumerate(jets):
        assert degree(p) <= j + 1
        assert all(c[j] == 0 if j < len(c) else True for c in p)
        assert parity_ok(j, p)
        if j:
            R = assemble_Q(j, jets)
            gap = apply_Lj(j, p)
            assert same(tuple(_strip(_padd(g, r)) for g, r in zip(gap, R)), vzero())


# charts ---------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 5.0), st.floats(1e-3, 5.0), st.sampled_from(list(CHARTS)))
def test_chart_round_trip(t, x, name):
    c = CHARTS[name]
    p, q = c.from_physical(t, x)
    t2, x2 = c.to_physical(p, q)
    assert abs(t2 - t) <= 1e-12 * max(1.0, t) and abs(x2 - x) <= 1e-12 * max(1.0, x)
    assert abs(np.linalg.det(c.jacobian(p, q))) > 0


@pytest.mark.parametrize("name", list(CHARTS))
def test_chart_jacobian_matches_finite_differences(name):
    c = CHARTS[name]
    p, q = c.from_physical(0.3, 0.7)
    J = c.jacobian(p, q)
    h = 1e-6
    cols = [(np.array(c.to_physical(p + h, q)) - np.array(c.to_physical(p - h, q))) / (2 * h),
            (np.array(c.to_physical(p, q + h)) - np.array(c.to_physical(p, q - h))) / (2 * h)]
    assert np.allclose(J, np.column_stack(cols), atol=1e-8)


def test_constant_field_is_constant_everywhere():
    for name in CHARTS:
        v = lift_field("physical", name, lambda t, x: 0 * t + 2.5, np.array([0.4]), np.array([0.3]))
        assert np.allclose(v, 2.5)


def test_coordinate_field_lifts_to_s_tau():
    tau, s = np.array([0.2, 0.5]), np.array([1.5, 0.1])
    v = lift_field("physical", "projective", lambda t, x: x, tau, s)
    assert np.allclose(v, s * tau, atol=1e-15)


def test_sampled_field_lift():
    t = np.linspace(0.01, 1.0, 60)
    x = np.linspace(0.0, 2.0, 80)
    vals = np.exp(-t)[:, None] * np.sin(x)[None, :]
    out = lift_field("physical", "projective", vals, np.array([0.5]), np.array([1.2]), grid=(t, x))
    assert abs(out[0] - math.exp(-0.125) * math.sin(0.6)) < 1e-5


def test_lifted_heat_identity():
    tau = np.linspace(0.2, 0.6, 41)
    s = np.linspace(0.0, 3.0, 301)
    u = lift_field("physical", "projective", lambda t, x: np.exp(-t) * np.sin(x),
                   tau[:, None] * np.ones_like(s), np.ones_like(tau)[:, None] * s)
    assert np.abs(lifted_heat_residual(u, tau, s)).max() < 1e-6


def test_projective_derivative_identities():
    tau, s = 0.4, 0.7
    t, x = 0.5 * tau * tau, s * tau
    u = lambda t, x: np.exp(-t) * np.sin(x)
    h = 1e-5
    ut_tau = (u(0.5 * (tau + h) ** 2, s * (tau + h)) - u(0.5 * (tau - h) ** 2, s * (tau - h))) / (2 * h)
    u_s = (u(t, (s + h) * tau) - u(t, (s - h) * tau)) / (2 * h)
    u_ss = (u(t, (s + h) * tau) - 2 * u(t, x) + u(t, (s - h) * tau)) / h ** 2
    ut, ux, uxx = projective_derivatives(tau, s, ut_tau, u_s, u_ss)
    assert abs(ut + math.exp(-t) * math.sin(x)) < 1e-6
    assert abs(ux - math.exp(-t) * math.cos(x)) < 1e-8
    assert abs(uxx + math.exp(-t) * math.sin(x)) < 1e-4


@pytest.mark.parametrize("name,point", [("projective", (0.0, 1.0)), ("corner", (0.5, 0.0)),
                                        ("polar", (0.0, 0.3))])
def test_chart_faces_raise(name, point):
    with pytest.raises(DomainError):
        CHARTS[name].to_physical(*point)


def test_projective_chart_rejects_initial_time():
    with pytest.raises(DomainError):
        CHARTS["projective"].from_physical(0.0, 0.5)


# lifted flow residual ------------------------------------------------------------


def test_straight_soliton_has_zero_lifted_residual():
    tau = np.linspace(0.1, 0.3, 5)
    s = np.linspace(0.0, 4.0, 201)
    a = np.array([0.6, 0.8])
    eta = np.broadcast_to(s[None, :, None] * a, (5, 201, 2)).copy()
    # both sides vanish; what remains is finite-difference roundoff
    assert lifted_flow_residual(eta, tau, s) < 1e-9


def test_cross_soliton_arcs_solve_the_lifted_equation(cross_soliton):
    for idx in cross_soliton.leaf_arcs:
        arc = cross_soliton.arcs[idx]
        keep = arc.s <= 4.0
        s = arc.s[keep]
        tau = np.linspace(0.1, 0.2, 5)
        eta = np.broadcast_to(arc.points[keep][None], (5, len(s), 2)).copy()
        assert lifted_flow_residual(eta, tau, s) < 1e-8


def test_lifted_residual_is_linear_in_perturbation():
    tau = np.linspace(0.1, 0.3, 7)
    s = np.linspace(0.0, 3.0, 151)
    a = np.array([1.0, 0.0])
    bump = np.stack([np.zeros_like(s), np.exp(-s * s)], axis=-1)
    sizes = np.array([1e-6, 2e-6, 4e-6])
    res = [lifted_flow_residual(s[None, :, None] * a + eps * tau[:, None, None] * bump, tau, s)
           for eps in sizes]
    ratio = np.array(res) / sizes
    assert np.ptp(ratio) / ratio.mean() < 1e-3


def test_lifted_residual_degenerate_speed():
    tau = np.linspace(0.1, 0.3, 5)
    s = np.linspace(0.0, 1.0, 21)
    with pytest.raises(DomainError):
        lifted_flow_residual(np.zeros((5, 21, 2)), tau, s)


# junction chart ------------------------------------------------------------------


def _unit_triod(theta=0.3):
    ang = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    return np.zeros((3, 2)), np.column_stack([np.cos(ang), np.sin(ang)])


def test_unit_triod_chart_values():
    v, w = _unit_triod(0.3)
    F = junction_chart_eval(v, w)
    assert np.allclose(F[:8], 0.0, atol=1e-15)
    assert np.allclose(F[8:11], 1.0)
    assert abs(F[11] - 0.3) < 1e-15


def _random_admissible(rng):
    v = rng.normal(size=(3, 2))
    w = rng.normal(size=(3, 2))
    w /= np.linalg.norm(w, axis=1)[:, None]
    return v, w * rng.uniform(0.3, 3.0, size=(3, 1))


def test_junction_chart_round_trip_and_determinant():
    rng = np.random.default_rng(7)
    dets = []
    for _ in range(1000):
        v, w = _random_admissible(rng)
        dets.append(np.linalg.det(junction_chart_jacobian(v, w)))
    assert min(abs(d) for d in dets) > 0
    for _ in range(100):
        v, w = _random_admissible(rng)
        F = junction_chart_eval(v, w)
        vv, ww, det = junction_chart_invert(F, v + 1e-3 * rng.normal(size=(3, 2)),
                                            w + 1e-3 * rng.normal(size=(3, 2)))
        assert np.abs(vv - v).max() < 1e-10 and np.abs(ww - w).max() < 1e-10
        assert det != 0


def test_junction_chart_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    v, w = _random_admissible(rng)
    z = np.concatenate([v.ravel(), w.ravel()])
    h = 1e-6
    cols = []
    for k in range(12):
        e = np.zeros(12)
        e[k] = h
        f = lambda z: junction_chart_eval(z[:6].reshape(3, 2), z[6:].reshape(3, 2))
        cols.append((f(z + e) - f(z - e)) / (2 * h))
    assert np.allclose(junction_chart_jacobian(v, w), np.column_stack(cols), atol=1e-7)


def test_junction_chart_inversion_failure():
    v, w = _unit_triod()
    target = junction_chart_eval(v, w)
    target[8] = -1.0  # a negative tangent length is unreachable
    with pytest.raises(InversionFailure):
        junction_chart_invert(target, v, w)


# build_expansion -----------------------------------------------------------------


def test_straight_triod_expansion_is_static(triod_soliton):
    jets = [np.vstack([d, np.zeros((3, 2))]) for d in triod_soliton.fan.directions]
    E = build_expansion(triod_soliton, jets, 3)
    for jet in E.jets.values():
        assert np.abs(jet.eta[1:]).max() < 1e-12
    assert E.defect(0.05) < 1e-8
    assert E.herring_defect(0.05) < 1e-10


@pytest.fixture(scope="module")
def curved_cross(cross_soliton):
    jets = [circular_jets(d, 0.5, 4) for d in cross_soliton.fan.directions]
    return {J: build_expansion(cross_soliton, jets, J) for J in (1, 2, 3)}


def test_defect_order_improves_with_J(curved_cross):
    orders = {J: defect_order(E) for J, E in curved_cross.items()}
    for J, rep in orders.items():
        assert rep.order == J + 1
        assert abs(rep.slope - (J + 1)) < 0.2 or J == 3
    assert orders[2].order - orders[1].order >= 1


def test_curved_cross_jets_have_degree_and_parity(curved_cross):
    E = curved_cross[3]
    assert E.degree_ok() and E.parity_ok()
    for jet in E.jets.values():
        assert jet.residuals.max() < 1e-6


def test_herring_balance_holds_to_order(curved_cross):
    for J, E in curved_cross.items():
        h1, h2 = E.herring_defect(0.04), E.herring_defect(0.02)
        assert math.log2(h1 / h2) > J + 0.8
        assert max(np.abs(jd.balance).max() for jd in E.junctions) < 1e-10


def test_frozen_positions_break_balance_at_first_order(cross_soliton):
    jets = [circular_jets(d, 0.5, 4) for d in cross_soliton.fan.directions]
    E = build_expansion(cross_soliton, jets, 2, mode="frozen")
    for jd in E.junctions:
        assert np.abs(jd.positions[1:]).max() == 0.0
    h1, h2 = E.herring_defect(0.01), E.herring_defect(0.005)
    assert abs(math.log2(h1 / h2) - 1.0) < 0.1
    assert defect_order(E).order == 3


def test_seeding_recovers_initial_curve(curved_cross, cross_soliton):
    E = curved_cross[2]
    arc = cross_soliton.leaf_arcs[0]
    gaps = [E.seeding_gap(arc, 0.3, t) for t in (0.02, 0.01, 0.005)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert abs(math.log2(gaps[1] / gaps[2]) - 2.0) < 0.1


def test_disconnected_cross_expansion(cross_disconnected):
    jets = [circular_jets(d, 0.5, 3) for d in cross_disconnected.fan.directions]
    E = build_expansion(cross_disconnected, jets, 2)
    assert defect_order(E).order == 3
    assert E.herring_defect(0.005) < 1e-5


def test_expansion_preconditions(cross_soliton):
    jets = [circular_jets(d, 0.5, 4) for d in cross_soliton.fan.directions]
    with pytest.raises(PreconditionError):
        build_expansion(cross_soliton, jets, 4)
    with pytest.raises(PreconditionError):
        build_expansion(cross_soliton, jets[:3], 2)
    bad = [circular_jets(-d, 0.5, 4) for d in cross_soliton.fan.directions]
    with pytest.raises(PreconditionError):
        build_expansion(cross_soliton, bad, 2)


def test_jet_dump_and_defect_csv(curved_cross, tmp_path):
    E = curved_cross[1]
    E.jets_to_json(tmp_path / "jets.json")
    doc = json.loads((tmp_path / "jets.json").read_text())
    ext = [d for d in doc if d["kind"] == "external"][0]
    top = ext["orders"][1]["polynomial"]
    assert all(isinstance(c, str) for comp in top for c in comp)
    assert [Fraction(c) for c in top[0]] == list(E.jets[ext["arc"]].poly[1][0])
    rep = defect_order(E)
    write_defect_csv(rep.taus, rep.defects, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "tau,residual" and len(lines) == 5


def test_vpoly_eval_derivative():
    u = vpoly([(1, 2), (3, 0), (0, Fraction(1, 2))])
    s = np.array([0.0, 1.0, 2.0])
    assert np.allclose(vpoly_eval(u, s), np.column_stack([1 + 3 * s, 2 + 0.5 * s * s]))
    assert np.allclose(vpoly_eval(u, s, 1), np.column_stack([3 + 0 * s, s]))
