"""Blowup charts and the corner expansion of the flow near a new soliton.

Near an irregular vertex the flow is written as ``gamma = tau * eta(tau, s)``
with ``tau = sqrt(2 t)`` and ``s = x / tau``.  Each outgoing arc then solves

    (tau d_tau + 1 - s d_s) eta = eta'' / |eta'|^2,

and the formal series ``eta ~ sum_j tau^j eta_j(s)`` turns this into the
linear problems ``L_j eta_j = -Q_j`` with ``L_j = d^2 + s d - (j + 1)``.
Over a straight background the polynomial parts are exact rationals; over a
curved soliton arc the coefficients are computed by Chebyshev collocation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq
from scipy.interpolate import BarycentricInterpolator, RectBivariateSpline

from .errors import DomainError, InversionFailure, PreconditionError, SolverFailure
from .expander import ATOL, RTOL, SolitonNetwork, _similarity_rhs
from .fd import derivative
from .heat import ModeSolution, cutoff, mode_residual, solve_mode

J_MAX = 3

Poly = list  # ascending Fraction coefficients
VPoly = tuple  # (x-component Poly, y-component Poly)


# Exact polynomial algebra -------------------------------------------------------


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


def _trim(p: Poly) -> Poly:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p or [Fraction(0)]


def _padd(p: Poly, q: Poly) -> Poly:
    n = max(len(p), len(q))
    return _trim([(p[i] if i < len(p) else 0) + (q[i] if i < len(q) else 0) for i in range(n)])


def _pscale(p: Poly, c) -> Poly:
    return _trim([c * x for x in p])


def _pmul(p: Poly, q: Poly) -> Poly:
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, x in enumerate(p):
        if x == 0:
            continue
        for k, y in enumerate(q):
            out[i + k] += x * y
    return _trim(out)


def _pder(p: Poly) -> Poly:
    return _trim([k * p[k] for k in range(1, len(p))])


def _vadd(u: VPoly, v: VPoly) -> VPoly:
    return (_padd(u[0], v[0]), _padd(u[1], v[1]))


def _vscale(u: VPoly, p: Poly) -> VPoly:
    return (_pmul(p, u[0]), _pmul(p, u[1]))


def _vder(u: VPoly) -> VPoly:
    return (_pder(u[0]), _pder(u[1]))


def _vdot(u: VPoly, v: VPoly) -> Poly:
    return _padd(_pmul(u[0], v[0]), _pmul(u[1], v[1]))


def vpoly(coeffs) -> VPoly:
    """Vector polynomial from ascending coefficient rows ``(c_x, c_y)``."""
    rows = [tuple(_frac(c) for c in row) for row in coeffs]
    if not rows:
        rows = [(Fraction(0), Fraction(0))]
    return (_trim([r[0] for r in rows]), _trim([r[1] for r in rows]))


def vzero() -> VPoly:
    return ([Fraction(0)], [Fraction(0)])


def degree(u: VPoly) -> int:
    """Degree of a vector polynomial; ``-1`` for the zero polynomial."""
    d = -1
    for p in u:
        nz = [k for k, c in enumerate(p) if c != 0]
        if nz:
            d = max(d, nz[-1])
    return d


def coefficient(u: VPoly, k: int) -> tuple[Fraction, Fraction]:
    return tuple(p[k] if k < len(p) else Fraction(0) for p in u)


def parity(u: VPoly) -> Literal["even", "odd", "zero", "mixed"]:
    nz = {k % 2 for p in u for k, c in enumerate(p) if c != 0}
    if not nz:
        return "zero"
    if nz == {0}:
        return "even"
    if nz == {1}:
        return "odd"
    return "mixed"


def vpoly_eval(u: VPoly, s, nu: int = 0) -> np.ndarray:
    """Evaluate ``u^{(nu)}`` at ``s``; returns shape ``s.shape + (2,)``."""
    s = np.asarray(s, dtype=float)
    for _ in range(nu):
        u = _vder(u)
    out = []
    for p in u:
        c = np.array([float(x) for x in p])
        out.append(np.polynomial.polynomial.polyval(s, c))
    return np.stack(out, axis=-1)


# Q_j and the L_j solves ----------------------------------------------------------


def _check_jets(j: int, jets: Sequence[VPoly]) -> float | Fraction:
    if j < 1:
        raise PreconditionError("Q_j is defined for j >= 1")
    if len(jets) < j:
        raise PreconditionError(f"Q_{j} needs jets eta_0..eta_{j - 1}, got {len(jets)}")
    eta0 = jets[0]
    if degree(eta0) > 1 or any(coefficient(eta0, 0)):
        raise PreconditionError("eta_0 must be a straight ray a s")
    a = coefficient(eta0, 1)
    alpha = a[0] * a[0] + a[1] * a[1]
    if alpha == 0:
        raise PreconditionError("eta_0 has zero speed")
    return alpha


def assemble_Q(j: int, jets: Sequence[VPoly]) -> VPoly:
    """Nonlinear forcing of the order-``j`` equation over a straight background.

    With ``eta_0 = a s`` and ``alpha = |a|^2``, write
    ``|eta'|^2 = alpha + sum_l tau^l X_l`` where
    ``X_l = 2 eta_0'.eta_l' + sum_{0<i<l} eta_i'.eta_{l-i}'``.  Expanding
    ``1/|eta'|^2`` as a geometric series gives coefficients ``F_l`` whose
    part not involving ``eta_l`` is ``B_l``; then

        Q_j = sum_{i=1}^{j-1} eta_i'' (B_{j-i} - 2 eta_0'.eta_{j-i}' / alpha^2).

    Parameters
    ----------
    j : int
        Order, ``j >= 1``.
    jets : sequence of vector polynomials
        ``eta_0, ..., eta_{j-1}``; further entries are ignored.

    Returns
    -------
    VPoly
        Exact polynomial ``Q_j``.  The exponential part is zero over a
        straight background.
    """
    alpha = _check_jets(j, jets)
    d1 = [_vder(e) for e in jets[:j]]
    d2 = [_vder(e) for e in d1]
    X = [None] + [
        _padd(_pscale(_vdot(d1[0], d1[l]), 2),
              _sum_polys(_vdot(d1[i], d1[l - i]) for i in range(1, l)))
        for l in range(1, j)
    ]
    # powers of the series X, truncated below order j
    powers = [None, X]
    for p in range(2, j):
        prev = powers[-1]
        powers.append([None] + [_sum_polys(_pmul(prev[i], X[l - i]) for i in range(1, l))
                                for l in range(1, j)])
    Q = vzero()
    for i in range(1, j):
        l = j - i
        F = _sum_polys(_pscale(powers[p][l], Fraction((-1) ** p) / alpha ** (p + 1))
                       for p in range(1, l + 1) if powers[p][l] is not None)
        linear = _pscale(_vdot(d1[0], d1[l]), Fraction(-2) / alpha ** 2)
        B = _padd(F, _pscale(linear, -1))
        Q = _vadd(Q, _vscale(d2[i], _padd(B, linear)))
    return Q


def _sum_polys(polys) -> Poly:
    out = [Fraction(0)]
    for p in polys:
        out = _padd(out, p)
    return out


def polynomial_Lj(j: int, R: VPoly, a, alpha=1) -> VPoly:
    """Exact polynomial ``P`` with ``P''/alpha + s P' - (j+1) P = R``.

    The ``s^{j+1}`` coefficient is ``a`` and the ``s^j`` coefficient is zero;
    ``R`` must have degree below ``j``.
    """
    alpha = _frac(alpha)
    if degree(R) >= j:
        raise PreconditionError(f"right-hand side of order {j} must have degree < {j}")
    a = [_frac(x) for x in a]
    out = []
    for comp in range(2):
        r = R[comp]
        c = [Fraction(0)] * (j + 4)
        c[j + 1] = a[comp]
        for l in range(j - 1, -1, -1):
            rl = r[l] if l < len(r) else 0
            c[l] = ((l + 2) * (l + 1) * c[l + 2] / alpha - rl) / (j + 1 - l)
        out.append(_trim(c[: j + 2]))
    return tuple(out)


def apply_Lj(j: int, u: VPoly, alpha=1) -> VPoly:
    """Exact ``L_j u = u''/alpha + s u' - (j+1) u``."""
    alpha = _frac(alpha)
    s = [Fraction(0), Fraction(1)]
    d1 = _vder(u)
    d2 = _vder(d1)
    out = []
    for c in range(2):
        out.append(_padd(_padd(_pscale(d2[c], 1 / alpha), _pmul(s, d1[c])),
                         _pscale(u[c], -(j + 1))))
    return tuple(out)


@dataclass
class OrderSolution:
    """Solution of ``L_j u = R`` split into exact polynomial and decaying parts."""

    j: int
    poly: VPoly
    s: np.ndarray
    corrector: np.ndarray
    modes: tuple[ModeSolution, ModeSolution]
    a: tuple
    b: np.ndarray

    def values(self) -> np.ndarray:
        return vpoly_eval(self.poly, self.s) + self.corrector

    def residual(self, R: VPoly) -> float:
        """Exact polynomial check combined with the decaying-part residual."""
        gap = _vadd(apply_Lj(self.j, self.poly), (_pscale(R[0], -1), _pscale(R[1], -1)))
        exact = max(abs(float(c)) for p in gap for c in p)
        return max(exact, *(mode_residual(m) for m in self.modes))


def solve_Lj(j: int, R: VPoly, a, b, R_exp: Callable | None = None,
             s: np.ndarray | None = None) -> OrderSolution:
    """Solve ``L_j u = R + R_exp`` with leading coefficient ``a`` and ``u(0) = b``.

    The polynomial part is found exactly by undetermined coefficients.  The
    decaying remainder, which carries the forcing ``R_exp`` and the boundary
    value, reuses the heat-model mode solver with ``m = j + 1``.

    Parameters
    ----------
    j : int
        Order, ``j >= 0``.
    R : VPoly
        Polynomial right-hand side of degree below ``j``.
    a : pair
        Coefficient of ``s^{j+1}``.
    b : pair
        Value at ``s = 0``.
    R_exp : callable, optional
        Rapidly decaying vector forcing ``s -> (n, 2)``.
    s : ndarray, optional
        Output grid starting at zero.
    """
    P = polynomial_Lj(j, R, a)
    b = np.asarray(b, dtype=float)
    p0 = vpoly_eval(P, 0.0)
    modes = []
    for c in range(2):
        f = None if R_exp is None else (lambda q, c=c: np.asarray(R_exp(q))[..., c])
        modes.append(solve_mode(j + 1, (), f, bc0=float(b[c] - p0[c]), leading=0.0, s=s))
    corr = np.column_stack([m.values() for m in modes])
    return OrderSolution(j, P, modes[0].s, corr, tuple(modes), tuple(_frac(x) for x in a), b)


def straight_jets(a, A: Sequence, J: int) -> list[VPoly]:
    """Exact polynomial parts ``P_0..P_J`` over the straight background ``a s``.

    ``A[j]`` is the ``s^{j+1}`` coefficient of ``eta_j``; ``A[0]`` must be
    ``a`` itself.
    """
    a = [_frac(x) for x in a]
    alpha = a[0] ** 2 + a[1] ** 2
    jets = [vpoly([(0, 0), a])]
    for j in range(1, J + 1):
        R = assemble_Q(j, jets)
        jets.append(polynomial_Lj(j, (_pscale(R[0], -1), _pscale(R[1], -1)), A[j], alpha))
    return jets


def parity_ok(j: int, u: VPoly) -> bool:
    """Parity rule: polynomial part of ``eta_j`` is odd for even ``j``, even for odd ``j``."""
    p = parity(u)
    return p == "zero" or p == ("odd" if j % 2 == 0 else "even")


def degree_ok(j: int, u: VPoly) -> bool:
    return degree(u) <= j + 1 and all(c == 0 for c in coefficient(u, j))


# Blowup charts ------------------------------------------------------------------


ChartName = Literal["physical", "projective", "corner", "polar"]


@dataclass(frozen=True)
class BlowupChart:
    """One coordinate system on the quarter plane ``t >= 0``, ``x >= 0``.

    ``projective`` is ``(tau, s) = (sqrt(2t), x / sqrt(2t))``, ``corner`` is
    ``(T, y) = (t / x^2, x)`` and ``polar`` is ``(rho, omega)`` with
    ``x = rho cos(omega)``, ``t = rho^2 sin(omega)``.
    """

    name: ChartName

    def to_physical(self, p, q) -> tuple[np.ndarray, np.ndarray]:
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if self.name == "physical":
            return p, q
        if self.name == "projective":
            if np.any(p <= 0):
                raise DomainError("projective chart is singular on tau = 0")
            return 0.5 * p * p, q * p
        if self.name == "corner":
            if np.any(q <= 0):
                raise DomainError("corner chart is singular on y = 0")
            return p * q * q, q
        if np.any(p <= 0):
            raise DomainError("polar chart is singular on rho = 0")
        return p * p * np.sin(q), p * np.cos(q)

    def from_physical(self, t, x) -> tuple[np.ndarray, np.ndarray]:
        t, x = np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        if np.any(t < 0) or np.any(x < 0):
            raise DomainError("charts cover t >= 0, x >= 0 only")
        if self.name == "physical":
            return t, x
        if self.name == "projective":
            if np.any(t <= 0):
                raise DomainError("projective chart is singular on t = 0")
            tau = np.sqrt(2.0 * t)
            return tau, x / tau
        if self.name == "corner":
            if np.any(x <= 0):
                raise DomainError("corner chart is singular on x = 0")
            return t / (x * x), x
        r2 = 0.5 * (x * x + np.sqrt(x ** 4 + 4.0 * t * t))
        if np.any(r2 <= 0):
            raise DomainError("polar chart is singular at the corner")
        r = np.sqrt(r2)
        return r, np.arctan2(t / r2, x / r)

    def jacobian(self, p, q) -> np.ndarray:
        """``d(t, x) / d(p, q)`` with shape ``p.shape + (2, 2)``."""
        p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
        self.to_physical(p, q)
        one, zero = np.ones_like(p), np.zeros_like(p)
        if self.name == "physical":
            rows = [[one, zero], [zero, one]]
        elif self.name == "projective":
            rows = [[p, zero], [q, p]]
        elif self.name == "corner":
            rows = [[q * q, 2 * p * q], [zero, one]]
        else:
            rows = [[2 * p * np.sin(q), p * p * np.cos(q)], [np.cos(q), -p * np.sin(q)]]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


CHARTS = {name: BlowupChart(name) for name in ("physical", "projective", "corner", "polar")}


def chart(name: ChartName | BlowupChart) -> BlowupChart:
    if isinstance(name, BlowupChart):
        return name
    if name not in CHARTS:
        raise PreconditionError(f"unknown chart {name!r}")
    return CHARTS[name]


def lift_field(chart_from, chart_to, field, p, q, grid: tuple | None = None) -> np.ndarray:
    """Values at ``(p, q)`` in ``chart_to`` of a field given in ``chart_from``.

    ``field`` is either a callable of the ``chart_from`` coordinates or, when
    ``grid = (g1, g2)`` is given, an array sampled on that tensor grid which is
    interpolated by a bicubic spline.
    """
    cf, ct = chart(chart_from), chart(chart_to)
    t, x = ct.to_physical(p, q)
    u, v = cf.from_physical(t, x)
    if grid is None:
        return np.asarray(field(u, v), dtype=float)
    spline = RectBivariateSpline(grid[0], grid[1], np.asarray(field, dtype=float))
    return spline(u, v, grid=False)


def projective_derivatives(tau, s, u_tau, u_s, u_ss) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(u_t, u_x, u_xx)`` from ``(tau, s)`` derivatives."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("projective derivatives need tau > 0")
    return (u_tau / tau - s * u_s / tau ** 2, u_s / tau, u_ss / tau ** 2)


def corner_derivatives(T, y, u_T, u_y) -> tuple[np.ndarray, np.ndarray]:
    """``(u_t, u_x)`` from ``(T, y)`` derivatives."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("corner derivatives need y > 0")
    return u_T / y ** 2, u_y - 2 * T * u_T / y


def lifted_heat_residual(u: np.ndarray, tau: np.ndarray, s: np.ndarray, width: int = 9) -> np.ndarray:
    """``tau^-2 (tau d_tau - s d_s - d_s^2) u`` on a tensor grid ``u[tau, s]``."""
    u_tau = derivative(tau, u, 1, min(width, len(tau)))
    us = derivative(s, u.T, 1, width).T
    uss = derivative(s, u.T, 2, width).T
    return (tau[:, None] * u_tau - s[None, :] * us - uss) / tau[:, None] ** 2


def lifted_flow_residual(eta: np.ndarray, tau: np.ndarray, s: np.ndarray, width: int = 9,
                         reduce: bool = True, similarity: bool = True):
    """Residual of ``(tau d_tau + 1 - s d_s) eta - eta'' / |eta'|^2``.

    Parameters
    ----------
    eta : ndarray, shape (n_tau, n_s, 2)
        Samples on the tensor grid ``tau x s``.
    tau, s : ndarray
        Increasing grids.
    width : int
        Finite-difference stencil width; the ``tau`` stencil is capped at the
        number of ``tau`` samples.
    reduce : bool
        Return the max norm instead of the residual field.
    similarity : bool
        Drop the ``s d_s`` term when false, for arcs on a fixed parameter
        interval such as internal edges.
    """
    eta = np.asarray(eta, dtype=float)
    tau, s = np.asarray(tau, dtype=float), np.asarray(s, dtype=float)
    if eta.shape != (len(tau), len(s), 2):
        raise PreconditionError("eta must have shape (len(tau), len(s), 2)")
    e_tau = derivative(tau, eta, 1, min(width, len(tau)))
    sw = np.moveaxis(eta, 1, 0)
    e_s = np.moveaxis(derivative(s, sw, 1, width), 0, 1)
    e_ss = np.moveaxis(derivative(s, sw, 2, width), 0, 1)
    speed2 = np.sum(e_s * e_s, axis=-1)
    if speed2.min() < 1e-16:
        raise DomainError("|d_s eta| vanishes on the grid")
    drift = s[None, :, None] * e_s if similarity else 0.0
    res = tau[:, None, None] * e_tau + eta - drift - e_ss / speed2[..., None]
    norm = np.linalg.norm(res, axis=-1)
    return float(norm.max()) if reduce else norm


# Junction chart ------------------------------------------------------------------


def junction_chart_eval(v, w) -> np.ndarray:
    """The map ``(v, w) -> (v1-v2, v2-v3, sum w_i/|w_i|, v1, |w_1|, |w_2|, |w_3|, phase)``.

    The phase is the polar angle of ``w_1``, which agrees with the arccosine
    of ``w_1 . e_1 / |w_1|`` on the upper half plane and extends it smoothly.
    """
    v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    if v.shape != (3, 2) or w.shape != (3, 2):
        raise PreconditionError("junction chart takes three positions and three tangents")
    n = np.linalg.norm(w, axis=1)
    if np.any(n == 0):
        raise PreconditionError("tangent vectors must be nonzero")
    return np.concatenate([v[0] - v[1], v[1] - v[2], (w / n[:, None]).sum(axis=0), v[0], n,
                           [math.atan2(w[0, 1], w[0, 0])]])


def junction_chart_jacobian(v, w) -> np.ndarray:
    """Analytic ``12 x 12`` Jacobian in the variables ``(v_1, v_2, v_3, w_1, w_2, w_3)``."""
    w = np.asarray(w, dtype=float)
    J = np.zeros((12, 12))
    eye = np.eye(2)
    J[0:2, 0:2], J[0:2, 2:4] = eye, -eye
    J[2:4, 2:4], J[2:4, 4:6] = eye, -eye
    J[6:8, 0:2] = eye
    for i in range(3):
        n = np.linalg.norm(w[i])
        u = w[i] / n
        cols = slice(6 + 2 * i, 8 + 2 * i)
        J[4:6, cols] = (eye - np.outer(u, u)) / n
        J[8 + i, cols] = u
    J[11, 6:8] = np.array([-w[0, 1], w[0, 0]]) / (w[0] @ w[0])
    return J


def junction_chart_invert(target, seed_v, seed_w, tol: float = 1e-13,
                          maxiter: int = 50) -> tuple[np.ndarray, np.ndarray, float]:
    """Newton inversion of the junction chart from a seed.

    Returns
    -------
    v, w : ndarray
        Positions and tangents with ``F(v, w) = target``.
    det : float
        Jacobian determinant at the solution.
    """
    target = np.asarray(target, dtype=float)
    z = np.concatenate([np.ravel(seed_v), np.ravel(seed_w)]).astype(float)

    def residual(z):
        r = junction_chart_eval(z[:6].reshape(3, 2), z[6:].reshape(3, 2)) - target
        r[11] = (r[11] + math.pi) % (2 * math.pi) - math.pi
        return r

    r = residual(z)
    for _ in range(maxiter):
        if np.abs(r).max() < tol:
            break
        Jm = junction_chart_jacobian(z[:6].reshape(3, 2), z[6:].reshape(3, 2))
        try:
            dz = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            raise InversionFailure("singular junction-chart Jacobian", float(np.abs(r).max()))
        lam = 1.0
        while lam > 1e-6:
            try:
                rn = residual(z + lam * dz)
            except PreconditionError:
                rn = None
            if rn is not None and np.abs(rn).max() < np.abs(r).max():
                break
            lam *= 0.5
        else:
            raise InversionFailure("junction-chart Newton stalled", float(np.abs(r).max()))
        z, r = z + lam * dz, rn
    if np.abs(r).max() > 1e-10:
        raise InversionFailure("junction-chart Newton did not converge", float(np.abs(r).max()))
    v, w = z[:6].reshape(3, 2), z[6:].reshape(3, 2)
    return v, w, float(np.linalg.det(junction_chart_jacobian(v, w)))


# Curved-background expansion ------------------------------------------------------


def _cheb(N: int, S: float) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev points on ``[0, S]`` and the differentiation matrix."""
    k = np.arange(N + 1)
    x = np.cos(np.pi * k / N)
    c = np.where((k == 0) | (k == N), 2.0, 1.0) * (-1.0) ** k
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    s = 0.5 * S * (1.0 - x)
    return s, -(2.0 / S) * D


def _series_forcing(d1: list[np.ndarray], d2: list[np.ndarray], j: int) -> np.ndarray:
    """Order-``j`` coefficient of ``eta''/|eta'|^2`` with ``eta_j`` set to zero."""
    w = [sum(np.sum(d1[i] * d1[l - i], axis=-1) for i in range(l + 1) if i < j and l - i < j)
         for l in range(j + 1)]
    r = [1.0 / w[0]]
    for l in range(1, j + 1):
        r.append(-r[0] * sum(w[k] * r[l - k] for k in range(1, l + 1)))
    return sum(r[k][:, None] * d2[j - k] for k in range(1, j + 1))


def _unit_series(d: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Coefficients of ``d / |d|`` for the vector series ``sum tau^i d_i``."""
    n = len(d)
    w = [sum(float(d[i] @ d[l - i]) for i in range(l + 1)) for l in range(n)]
    f = [w[0] ** -0.5]
    for m in range(1, n):
        f.append(sum((0.5 * k - m) * w[k] * f[m - k] for k in range(1, m + 1)) / (m * w[0]))
    return [sum(f[k] * d[l - k] for k in range(l + 1)) for l in range(n)]


@dataclass
class ExpansionJet:
    """Coefficients ``eta_0..eta_J`` of one arc of the expansion.

    External arcs live on ``[0, S]`` in the similarity variable ``s``;
    internal arcs on ``[0, 1]`` in a fixed parameter ``u`` in which the
    soliton arc satisfies ``eta_0 = eta_0'' / |eta_0'|^2``.  ``eta[j]`` holds
    samples at Chebyshev nodes.  For external arcs ``poly[j]`` is the exact
    polynomial part with leading coefficient ``a[j]``, and beyond ``S`` each
    coefficient is its polynomial part.  ``b[j]`` is the value at the first
    node.
    """

    arc: int
    kind: str
    S: float
    s: np.ndarray
    eta: np.ndarray
    poly: tuple
    a: np.ndarray
    b: np.ndarray
    residuals: np.ndarray
    _interp: list = field(default_factory=list, repr=False)

    @property
    def J(self) -> int:
        return len(self.eta) - 1

    @property
    def similarity(self) -> bool:
        return self.kind == "external"

    def _interpolant(self, j: int) -> BarycentricInterpolator:
        while len(self._interp) <= j:
            k = len(self._interp)
            self._interp.append(BarycentricInterpolator(self.s, self.eta[k]))
        return self._interp[j]

    def coefficient(self, j: int, s, nu: int = 0) -> np.ndarray:
        """``d^nu eta_j / ds^nu`` at ``s``, shape ``s.shape + (2,)``."""
        s = np.asarray(s, dtype=float)
        if not self.similarity and (np.any(s < 0) or np.any(s > self.S)):
            raise DomainError("internal arcs are parametrized on [0, 1]")
        out = vpoly_eval(self.poly[j], s, nu)
        inside = s <= self.S
        if np.any(inside):
            f = self._interpolant(j)
            out[inside] = f(s[inside]) if nu == 0 else f.derivative(s[inside], nu)
        return out

    def corrector(self, j: int) -> np.ndarray:
        """Decaying part ``eta_j - P_j`` at the nodes."""
        return self.eta[j] - vpoly_eval(self.poly[j], self.s)

    def degree_ok(self) -> bool:
        return all(degree_ok(j, p) for j, p in enumerate(self.poly))

    def parity_ok(self) -> bool:
        return all(parity_ok(j, p) for j, p in enumerate(self.poly))

    def to_dict(self) -> dict:
        return {
            "arc": self.arc,
            "kind": self.kind,
            "S": self.S,
            "s": self.s.tolist(),
            "orders": [
                {
                    "j": j,
                    "polynomial": [[str(c) for c in comp] for comp in self.poly[j]],
                    "leading": self.a[j].tolist(),
                    "boundary": self.b[j].tolist(),
                    "corrector": self.corrector(j).tolist(),
                }
                for j in range(self.J + 1)
            ],
        }


def _internal_speed(p, theta: float, length: float) -> float:
    """Launch speed in ``u`` so that ``u in [0, 1]`` covers ``length`` of arc."""

    def rhs(_, y):
        return list(_similarity_rhs(0.0, y[:4])) + [y[3]]

    def gap(v0):
        sol = solve_ivp(rhs, (0.0, 1.0), [p[0], p[1], theta, v0, 0.0], method="DOP853",
                        rtol=RTOL, atol=ATOL)
        return float(sol.y[4, -1] - length)

    lo, hi = 0.5 * length, 2.0 * length
    while gap(lo) > 0:
        lo *= 0.5
    while gap(hi) < 0:
        hi *= 2.0
    return brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15)


class _ArcProblem:
    """Background data and order-``j`` collocation systems for one arc."""

    def __init__(self, arc: int, kind: str, p, theta: float, v0: float, S: float, N: int,
                 poly: Sequence[VPoly] | None = None, A: np.ndarray | None = None):
        self.arc, self.kind, self.S, self.N = arc, kind, S, N
        self.s, self.D = _cheb(N, S)
        self.D2 = self.D @ self.D
        sim = kind == "external"
        sol = solve_ivp(_similarity_rhs if sim else (lambda u, y: _similarity_rhs(0.0, y)),
                        (0.0, S), [p[0], p[1], theta, v0], method="DOP853", rtol=RTOL,
                        atol=ATOL, dense_output=True, max_step=0.02)
        if sol.status != 0:
            raise SolverFailure("background arc integration failed", float("nan"))
        y = sol.sol(self.s)
        rhs = np.array([_similarity_rhs(si if sim else 0.0, y[:, i]) for i, si in enumerate(self.s)])
        th, v = y[2], y[3]
        T = np.column_stack([np.cos(th), np.sin(th)])
        Nrm = np.column_stack([-np.sin(th), np.cos(th)])
        self.eta = [y[:2].T.copy()]
        self.d1 = [v[:, None] * T]
        self.d2 = [rhs[:, 3:4] * T + (v * rhs[:, 2])[:, None] * Nrm]
        self.poly = list(poly) if poly is not None else [vzero()]
        self.A = A
        self.res = [0.0]
        self._lu: dict[int, tuple] = {}

    def matrix(self, j: int):
        if j not in self._lu:
            n, w0 = self.N + 1, np.sum(self.d1[0] ** 2, axis=1)
            M = np.zeros((2 * n, 2 * n))
            drift = self.s[:, None] * self.D if self.kind == "external" else 0.0
            for c in range(2):
                blk = slice(c * n, (c + 1) * n)
                M[blk, blk] = self.D2 / w0[:, None] + drift - (j + 1) * np.eye(n)
                for e in range(2):
                    M[blk, e * n:(e + 1) * n] += -2.0 * (self.d2[0][:, c] * self.d1[0][:, e]
                                                         / w0 ** 2)[:, None] * self.D
            for row in (0, self.N, n, n + self.N):
                M[row] = 0.0
                M[row, row] = 1.0
            self._lu[j] = (M, lu_factor(M))
        return self._lu[j]

    def forcing(self, j: int) -> np.ndarray:
        return -_series_forcing(self.d1 + [None], self.d2 + [None], j).T.reshape(-1)

    def far_value(self, j: int) -> np.ndarray:
        if self.kind == "external":
            return vpoly_eval(self.poly[j], self.S)
        return np.zeros(2)

    def solve(self, j: int, rhs: np.ndarray, start, end) -> np.ndarray:
        n = self.N + 1
        rhs = rhs.copy()
        rhs[[0, n]] = start
        rhs[[self.N, n + self.N]] = end
        return lu_solve(self.matrix(j)[1], rhs).reshape(2, n).T

    def accept(self, j: int, u: np.ndarray, rhs: np.ndarray) -> None:
        M = self.matrix(j)[0]
        n = self.N + 1
        gap = (M @ u.T.reshape(-1) - rhs).reshape(2, n)[:, 1:-1]
        self.res.append(float(np.abs(gap).max()))
        self.eta.append(u)
        self.d1.append(self.D @ u)
        self.d2.append(self.D2 @ u)
        if self.kind != "external":
            self.poly.append(vzero())

    def outgoing(self, end: str, u: np.ndarray | None = None, order: int | None = None) -> np.ndarray:
        """Outgoing derivative at an end, of ``u`` or of stored coefficient ``order``."""
        d = self.D @ u if u is not None else self.d1[order]
        return d[0] if end == "start" else -d[-1]

    def jet(self) -> ExpansionJet:
        J = len(self.eta) - 1
        if self.A is None:
            a = np.zeros((J + 1, 2))
        else:
            a = np.array([[float(x) for x in row] for row in self.A[: J + 1]])
        b = np.array([e[0] for e in self.eta])
        return ExpansionJet(self.arc, self.kind, self.S, self.s, np.array(self.eta),
                            tuple(self.poly[: J + 1]), a, b, np.array(self.res))


def _external_problem(sol: SolitonNetwork, ai: int, A, J: int, S: float, N: int) -> _ArcProblem:
    arc = sol.arcs[ai]
    A = [tuple(_frac(c) for c in row) for row in np.asarray(A, dtype=float)]
    if len(A) < J + 1:
        raise PreconditionError(f"arc {ai} needs {J + 1} Taylor coefficients")
    if np.linalg.norm(np.asarray(A[0], dtype=float) - arc.direction) > 1e-8:
        raise PreconditionError("leading coefficient of eta_0 must be the asymptotic direction")
    theta = math.atan2(arc.tangents[0, 1], arc.tangents[0, 0])
    v0 = float(np.linalg.norm(arc.tangents[0]))
    return _ArcProblem(ai, "external", arc.points[0], theta, v0, S, N,
                       straight_jets(arc.direction, A, J), A)


def _internal_problem(sol: SolitonNetwork, ai: int, N: int) -> _ArcProblem:
    arc = sol.arcs[ai]
    theta = math.atan2(arc.tangents[0, 1], arc.tangents[0, 0])
    v0 = _internal_speed(arc.points[0], theta, float(arc.s[-1]))
    prob = _ArcProblem(ai, "internal", arc.points[0], theta, v0, 1.0, N)
    miss = np.linalg.norm(prob.eta[0][-1] - arc.points[-1])
    if miss > 1e-8:
        raise SolverFailure("internal arc reparametrization missed its far junction", miss)
    return prob


def expand_arc(sol: SolitonNetwork, ai: int, A: Sequence, b: Sequence, J: int,
               S: float = 8.0, N: int = 96) -> ExpansionJet:
    """Coefficients of external arc ``ai`` with prescribed values ``b[j]`` at ``s = 0``.

    Each ``eta_j`` solves the order-``j`` equation linearized about the curved
    soliton arc, with ``eta_j(S)`` equal to the polynomial part fixed by the
    leading coefficient ``A[j]``.
    """
    prob = _external_problem(sol, ai, A, J, S, N)
    for j in range(1, J + 1):
        rhs = prob.forcing(j)
        u = prob.solve(j, rhs, b[j], prob.far_value(j))
        prob.accept(j, u, _bc_rhs(prob, rhs, b[j], prob.far_value(j)))
    return prob.jet()


def _bc_rhs(prob: _ArcProblem, rhs: np.ndarray, start, end) -> np.ndarray:
    n = prob.N + 1
    rhs = rhs.copy()
    rhs[[0, n]] = start
    rhs[[prob.N, n + prob.N]] = end
    return rhs


@dataclass
class JunctionData:
    """Cauchy data and chart values of one junction at ``tau = 0``.

    ``positions`` holds the Taylor coefficients in ``tau`` of the junction
    position and ``balance`` the norm of the order-``j`` coefficient of the
    summed unit tangents for each ``j``.
    """

    index: int
    ends: tuple
    v: np.ndarray
    w: np.ndarray
    chart: np.ndarray
    det: float
    positions: np.ndarray = None
    balance: np.ndarray = None


@dataclass
class Expansion:
    """Corner expansion of the flow out of a soliton network."""

    sol: SolitonNetwork
    J: int
    jets: dict
    junctions: list
    mode: str = "herring"
    borel: float = 1.0

    def weights(self, tau) -> np.ndarray:
        """Borel-style cutoffs ``chi(tau j^2 / borel) tau^j`` for ``j = 0..J``."""
        tau = np.asarray(tau, dtype=float)
        w = [np.ones_like(tau)]
        for j in range(1, self.J + 1):
            w.append(cutoff(tau * j * j / self.borel) * tau ** j)
        return np.stack(w, axis=-1)

    def eta_hat(self, arc: int, tau, s, nu: int = 0) -> np.ndarray:
        """Truncated series on the tensor grid ``tau x s``; shape ``(n_tau, n_s, 2)``."""
        jet = self.jets[arc]
        coeffs = np.stack([jet.coefficient(j, s, nu) for j in range(self.J + 1)])
        return np.einsum("tj,jsc->tsc", self.weights(np.atleast_1d(tau)), coeffs)

    def defect(self, tau: float, s_max: float = 4.0, h: float = 0.02, delta: float = 0.05) -> float:
        """Max lifted flow residual over all arcs at a single ``tau``."""
        taus = tau * (1.0 + delta * np.arange(-2, 3))
        worst = 0.0
        for arc, jet in self.jets.items():
            # external arcs are sampled past s_max so that stencils there stay centred
            top = s_max + 4 * h if jet.similarity else jet.S
            s = np.linspace(0.0, top, int(round(top / h)) + 1)
            res = lifted_flow_residual(self.eta_hat(arc, taus, s), taus, s, reduce=False,
                                       similarity=jet.similarity)
            worst = max(worst, float(res[2][s <= s_max + 1e-12].max()))
        return worst

    def defect_coefficients(self, K: int | None = None, rho: float = 0.05, M: int = 64,
                            s_max: float = 4.0, h: float = 0.02) -> np.ndarray:
        """Sizes of the Taylor coefficients in ``tau`` of the lifted flow residual.

        The truncated series is a polynomial in ``tau``, so the residual with
        finite-difference ``s`` derivatives extends to complex ``tau``.  Its
        coefficients come from an FFT over the circle ``|tau| = rho``; entry
        ``k`` is the max over arcs and ``s`` of the norm of the ``tau^k``
        coefficient.
        """
        K = self.J + 3 if K is None else K
        if rho * self.J ** 2 >= self.borel:
            raise PreconditionError("the circle must lie where every cutoff equals one")
        tau = rho * np.exp(2j * np.pi * np.arange(M) / M)
        powers = tau[:, None] ** np.arange(self.J + 1)
        out = np.zeros(K + 1)
        for arc, jet in self.jets.items():
            top = s_max + 4 * h if jet.similarity else jet.S
            s = np.linspace(0.0, top, int(round(top / h)) + 1)
            E = np.stack([jet.coefficient(j, s) for j in range(self.J + 1)])
            E1 = np.stack([derivative(s, e, 1) for e in E])
            E2 = np.stack([derivative(s, e, 2) for e in E])
            lin = (np.arange(1, self.J + 2)[:, None, None] * E
                   - (s[None, :, None] * E1 if jet.similarity else 0.0))
            d1 = np.einsum("mj,jsc->msc", powers, E1)
            res = (np.einsum("mj,jsc->msc", powers, lin)
                   - np.einsum("mj,jsc->msc", powers, E2) / np.sum(d1 * d1, axis=-1)[..., None])
            coef = np.fft.fft(res, axis=0) / M
            coef = coef[: K + 1] / rho ** np.arange(K + 1)[:, None, None]
            keep = s <= s_max + 1e-12 if jet.similarity else slice(None)
            mags = np.linalg.norm(coef[:, keep], axis=-1).max(axis=1)
            out = np.maximum(out, mags)
        return out

    def herring_defect(self, tau: float) -> float:
        """Largest norm of summed unit tangents over all junctions at ``tau``."""
        worst = 0.0
        for jd in self.junctions:
            total = np.zeros(2)
            for ai, end in jd.ends:
                jet = self.jets[ai]
                at = np.array([0.0 if end == "start" else jet.S])
                d = self.eta_hat(ai, tau, at, nu=1)[0, 0]
                d = d if end == "start" else -d
                total += d / np.linalg.norm(d)
            worst = max(worst, float(np.linalg.norm(total)))
        return worst

    def seeding_gap(self, arc: int, x: float, tau: float) -> float:
        """``|tau eta_hat(tau, x/tau) - sum_j a_j x^{j+1}|``; vanishes as ``tau -> 0``."""
        jet = self.jets[arc]
        target = sum(jet.a[j] * x ** (j + 1) for j in range(self.J + 1))
        val = tau * self.eta_hat(arc, tau, np.array([x / tau]))[0, 0]
        return float(np.linalg.norm(val - target))

    def curves(self, t: float, radius: float | None = None, n: int = 200) -> list[np.ndarray]:
        """Physical polylines ``tau eta_hat`` at time ``t``; external arcs clipped to ``radius``."""
        tau = math.sqrt(2.0 * t)
        out = []
        for i, jet in sorted(self.jets.items()):
            top = jet.S if (radius is None or not jet.similarity) else radius / tau
            pts = tau * self.eta_hat(i, tau, np.linspace(0.0, top, n))[0]
            if radius is not None and jet.similarity:
                pts = pts[np.linalg.norm(pts, axis=1) <= radius]
            out.append(pts)
        return out

    def parity_ok(self) -> bool:
        return all(j.parity_ok() for j in self.jets.values())

    def degree_ok(self) -> bool:
        return all(j.degree_ok() for j in self.jets.values())

    def jets_to_json(self, path) -> None:
        Path(path).write_text(json.dumps([jet.to_dict() for _, jet in sorted(self.jets.items())],
                                          indent=1))


def _outgoing(sol: SolitonNetwork, ai: int, end: str) -> np.ndarray:
    t = sol.arcs[ai].tangents
    return t[0] if end == "start" else -t[-1]


def _junction_data(sol: SolitonNetwork, i: int) -> JunctionData:
    jn = sol.junctions[i]
    m = len(jn.ends)
    v = np.array([jn.position] * m)
    w = np.array([_outgoing(sol, ai, end) for ai, end in jn.ends])
    if m != 3:
        return JunctionData(i, jn.ends, v, w, np.array([]), float("nan"))
    F = junction_chart_eval(v, w)
    vv, ww, det = junction_chart_invert(F, v + 1e-3, w * 1.001)
    return JunctionData(i, jn.ends, vv, ww, F, det)


def build_expansion(sol: SolitonNetwork, leaf_jets: Sequence, J: int = J_MAX,
                    mode: Literal["herring", "frozen"] = "herring", positions: dict | None = None,
                    S: float = 8.0, N: int = 96, N_internal: int = 48,
                    borel: float = 1.0) -> Expansion:
    """Expand the flow out of ``sol`` to order ``J`` in ``tau``.

    Every arc coefficient ``eta_j`` solves the order-``j`` equation linearized
    about the curved soliton arc.  External arcs take their ``s^{j+1}``
    coefficient from the incoming curve and internal arcs are pinned to the
    junctions at both ends.  In ``herring`` mode the order-``j`` junction
    positions are chosen so that the summed unit tangents vanish to order
    ``j`` at every junction; in ``frozen`` mode they are taken from
    ``positions`` (default: constant soliton positions).

    Parameters
    ----------
    sol : SolitonNetwork
        Expander network; external arcs start at their junction.
    leaf_jets : sequence
        ``leaf_jets[l][k]`` is the Taylor coefficient ``A_{k+1}`` of the
        incoming curve of fan ray ``l``, in a parametrization with unit speed
        at the vertex; at least ``J + 1`` rows per leaf.
    J : int
        Expansion order, at most ``J_MAX``.
    positions : dict, optional
        Junction index to Taylor coefficients ``(J+1, 2)`` of its position,
        used in ``frozen`` mode.
    """
    if not 0 <= J <= J_MAX:
        raise PreconditionError(f"expansion order must lie in [0, {J_MAX}]")
    if mode not in ("herring", "frozen"):
        raise PreconditionError(f"unknown junction mode {mode!r}")
    if len(leaf_jets) != len(sol.leaf_arcs):
        raise PreconditionError("need one jet per fan ray")
    probs: dict[int, _ArcProblem] = {}
    for leaf, ai in enumerate(sol.leaf_arcs):
        probs[ai] = _external_problem(sol, ai, leaf_jets[leaf], J, S, N)
    for ai in sol.internal_arcs():
        probs[ai] = _internal_problem(sol, ai, N_internal)
    ends_at: dict[int, list] = {ai: [None, None] for ai in probs}
    for i, jn in enumerate(sol.junctions):
        for ai, end in jn.ends:
            if end != "start" and probs[ai].kind == "external":
                raise PreconditionError("external arcs must start at their junction")
            ends_at[ai][0 if end == "start" else 1] = i
    K = len(sol.junctions)
    beta = np.zeros((J + 1, K, 2))
    beta[0] = [jn.position for jn in sol.junctions]
    if mode == "frozen" and positions:
        for i, path in positions.items():
            beta[1:, i] = np.asarray(path, dtype=float)[1: J + 1]
    balance = np.zeros((J + 1, K))

    def boundary(ai, j, b):
        st, en = ends_at[ai]
        start = b[st] if st is not None else np.zeros(2)
        end = b[en] if en is not None else probs[ai].far_value(j)
        return start, end

    for j in range(1, J + 1):
        rhs = {ai: pr.forcing(j) for ai, pr in probs.items()}

        def solve_all(b, homogeneous=False):
            out = {}
            for ai, pr in probs.items():
                start, end = boundary(ai, j, b)
                if homogeneous and ends_at[ai][1] is None:
                    end = np.zeros(2)
                out[ai] = pr.solve(j, 0.0 * rhs[ai] if homogeneous else rhs[ai], start, end)
            return out

        def herring(sols):
            out = np.zeros((K, 2))
            for i, jn in enumerate(sol.junctions):
                for ai, end in jn.ends:
                    pr = probs[ai]
                    d = [pr.outgoing(end, order=k) for k in range(j)] + [pr.outgoing(end, sols[ai])]
                    out[i] += _unit_series(d)[j]
            return out

        base = solve_all(beta[j])
        if mode == "herring":
            h0 = herring(base)
            cols, resp = [], []
            for i in range(K):
                for c in range(2):
                    e = np.zeros((K, 2))
                    e[i, c] = 1.0
                    r = solve_all(e, homogeneous=True)
                    resp.append(r)
                    cols.append((herring({ai: base[ai] + r[ai] for ai in r}) - h0).ravel())
            M = np.column_stack(cols)
            x = np.linalg.lstsq(M, -h0.ravel(), rcond=1e-10)[0]
            beta[j] = x.reshape(K, 2)
            for ai in base:
                base[ai] = base[ai] + sum(x[k] * resp[k][ai] for k in range(len(x)))
        for ai, pr in probs.items():
            start, end = boundary(ai, j, beta[j])
            pr.accept(j, base[ai], _bc_rhs(pr, rhs[ai], start, end))
        balance[j] = np.linalg.norm(herring({ai: probs[ai].eta[j] for ai in probs}), axis=1)

    junctions = []
    for i in range(K):
        jd = _junction_data(sol, i)
        jd.positions = beta[:, i].copy()
        jd.balance = balance[:, i].copy()
        junctions.append(jd)
    jets = {ai: pr.jet() for ai, pr in probs.items()}
    return Expansion(sol, J, jets, junctions, mode, borel)


@dataclass
class DefectOrder:
    """Outcome of a defect-order study.

    ``order`` is the first ``k`` whose ``tau^k`` residual coefficient exceeds
    ``tol``; ``slope`` is the least-squares slope of ``log defect`` against
    ``log tau``, which approaches ``order`` as ``tau -> 0``.
    """

    order: float
    slope: float
    coefficients: np.ndarray
    taus: np.ndarray
    defects: np.ndarray


def defect_order(exp: Expansion, taus: Sequence[float] = (0.0025, 0.005, 0.01, 0.02),
                 rel_tol: float = 1e-6, abs_tol: float = 1e-8, s_max: float = 4.0,
                 h: float = 0.02) -> DefectOrder:
    """Order of vanishing in ``tau`` of the flow defect of the truncated series.

    A coefficient counts as nonzero when it exceeds both ``abs_tol`` and
    ``rel_tol`` times the largest coefficient; ``order`` is infinite when
    none does.
    """
    taus = np.asarray(taus, dtype=float)
    d = np.array([exp.defect(t, s_max=s_max, h=h) for t in taus])
    slope = float(np.polyfit(np.log(taus), np.log(d), 1)[0]) if np.all(d > 0) else math.inf
    coef = exp.defect_coefficients(s_max=s_max, h=h)
    big = np.nonzero(coef > max(abs_tol, rel_tol * coef.max()))[0]
    order = float(big[0]) if len(big) else math.inf
    return DefectOrder(order, slope, coef, taus, d)


def write_defect_csv(taus, defects, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "residual"])
        for t, d in zip(taus, defects):
            w.writerow([f"{t:.10g}", f"{d:.10e}"])


def curve_jets(points: np.ndarray, order: int, radius: float | None = None) -> np.ndarray:
    """Taylor coefficients ``A_1..A_order`` of a sampled curve at its first point.

    The curve is parametrized by arclength and fitted by least squares with a
    polynomial vanishing at the vertex, using samples within ``radius`` of it.
    ``A_1`` is normalized to a unit vector.
    """
    pts = np.asarray(points, dtype=float)
    x = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    keep = x <= (radius if radius is not None else x[-1])
    if keep.sum() < order + 2:
        raise PreconditionError("not enough samples near the vertex for the jet fit")
    V = np.column_stack([x[keep] ** k for k in range(1, order + 1)])
    coef, *_ = np.linalg.lstsq(V, pts[keep] - pts[0], rcond=None)
    coef[0] /= np.linalg.norm(coef[0])
    return coef


def circular_jets(direction, curvature: float, order: int) -> np.ndarray:
    """Taylor coefficients ``A_1..A_order`` of a unit-speed circular arc.

    The arc leaves the origin along ``direction`` and bends to the left with
    signed ``curvature``.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    n = np.array([-d[1], d[0]])
    out = np.zeros((order, 2))
    for k in range(1, order + 1):
        c = curvature ** (k - 1) / math.factorial(k)
        if k % 2:
            out[k - 1] = (-1) ** ((k - 1) // 2) * c * d
        else:
            out[k - 1] = (-1) ** (k // 2 + 1) * c * n
    return out
