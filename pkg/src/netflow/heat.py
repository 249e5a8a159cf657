"""Mixed Cauchy-Dirichlet heat problem on the quarter plane.

``u_t = u_xx`` for ``t, x >= 0`` with ``u(0, x) = phi(x)`` and
``u(t, 0) = psi(t)``.  The solution is written as ``u = v - w`` where ``v`` is
an explicit approximate solution built from the corner expansion in the
blow-up coordinates ``tau = sqrt(2t)``, ``s = x / sqrt(2t)`` and ``w`` removes
the remaining defect with zero initial and boundary data.

Exact recursions for the corner coefficients are kept in rational
arithmetic.  Mode functions solve ``v'' + s v' - m v = R``; their decaying
homogeneous solutions are ``V_m(s) = exp(-s^2/4) D_{-m-1}(s)`` with ``D`` the
parabolic cylinder function.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import special
from scipy.integrate import quad
from scipy.interpolate import RectBivariateSpline
from scipy.linalg import solve_banded

from .errors import DomainError, PreconditionError, SolverFailure
from .fd import derivative

# Exact recursion tables -----------------------------------------------------------


def recursion_c(j: int, c_jj, bc0=None) -> tuple[list[Fraction], Fraction | None]:
    """Coefficients ``c[j][0..j]`` of the polynomial part of mode ``j``.

    Downward recursion ``(l+2)(l+1) c[l+2] + (l-j) c[l] = 0`` from the free
    leading coefficient.  When ``bc0`` is given the second return value is
    ``bc0 - c[j][0]``, the part of the boundary value that has to be carried
    by the decaying homogeneous solution.
    """
    if j < 0:
        raise PreconditionError("j must be non-negative")
    c = [Fraction(0)] * (j + 1)
    c[j] = Fraction(c_jj)
    for l in range(j - 2, -1, -1):
        c[l] = Fraction((l + 2) * (l + 1)) * c[l + 2] / (j - l)
    rem = None if bc0 is None else Fraction(bc0) - c[0]
    return c, rem


def recursion_A(j: int, A_j0, length: int | None = None) -> list[Fraction]:
    """Row ``A[j][0..length-1]`` from ``A[j][p+1] = (j-2p)(j-2p-1) A[j][p] / (p+1)``."""
    if j < 0:
        raise PreconditionError("j must be non-negative")
    n = j + 1 if length is None else length
    row = [Fraction(0)] * n
    if n:
        row[0] = Fraction(A_j0)
    for p in range(n - 1):
        row[p + 1] = Fraction((j - 2 * p) * (j - 2 * p - 1), p + 1) * row[p]
    return row


@dataclass(frozen=True)
class SeriesTable:
    """Corner coefficient tables up to order ``J``.

    ``c[j]`` has ``j + 1`` entries; ``A[j]`` has ``J + 1`` entries so that the
    vanishing for ``p > j/2`` is stored explicitly.  ``remainders[j]`` is the
    boundary value carried by the decaying mode (zero when no boundary data
    was supplied).
    """

    J: int
    c: tuple[tuple[Fraction, ...], ...]
    A: tuple[tuple[Fraction, ...], ...]
    remainders: tuple[Fraction, ...]

    def polynomial(self, j: int) -> Polynomial:
        return Polynomial([float(x) for x in self.c[j]])


def series_table(J: int, seeds: Sequence | None = None, A_seeds: Sequence | None = None,
                 bc0: Sequence | None = None) -> SeriesTable:
    """Build both tables; ``A_seeds`` defaults to ``seeds`` (the matching choice)."""
    if J < 0:
        raise PreconditionError("J must be non-negative")
    seeds = [1] * (J + 1) if seeds is None else list(seeds)
    A_seeds = seeds if A_seeds is None else list(A_seeds)
    if len(seeds) < J + 1 or len(A_seeds) < J + 1:
        raise PreconditionError("need one seed per order")
    c_rows, rems = [], []
    for j in range(J + 1):
        row, rem = recursion_c(j, seeds[j], None if bc0 is None else bc0[j])
        c_rows.append(tuple(row))
        rems.append(Fraction(0) if rem is None else rem)
    A_rows = [tuple(recursion_A(j, A_seeds[j], J + 1)) for j in range(J + 1)]
    return SeriesTable(J, tuple(c_rows), tuple(A_rows), tuple(rems))


def cross_consistency(table: SeriesTable) -> tuple[bool, tuple[int, int] | None]:
    """Check ``2^p c[j][j-2p] == A[j][p]`` exactly; return the first failing ``(j, p)``."""
    for j in range(table.J + 1):
        if table.c[j][j] != table.A[j][0]:
            raise PreconditionError(f"seeds differ at j={j}")
    for j in range(table.J + 1):
        for p in range(j // 2 + 1):
            if 2**p * table.c[j][j - 2 * p] != table.A[j][p]:
                return False, (j, p)
    return True, None


def recursion_defects(table: SeriesTable) -> dict[str, int]:
    """Count violations of each exact identity (all zero for a valid table)."""
    bad = {"recc": 0, "recA": 0, "odd_gap": 0, "A_vanish": 0}
    for j in range(table.J + 1):
        c = list(table.c[j]) + [Fraction(0), Fraction(0)]
        for l in range(j + 1):
            if (l + 2) * (l + 1) * c[l + 2] + (l - j) * c[l] != 0:
                bad["recc"] += 1
            if (j - l) % 2 == 1 and c[l] != 0:
                bad["odd_gap"] += 1
        A = table.A[j]
        for p in range(len(A) - 1):
            if (p + 1) * A[p + 1] != (j - 2 * p) * (j - 2 * p - 1) * A[p]:
                bad["recA"] += 1
            if 2 * p > j and A[p] != 0:
                bad["A_vanish"] += 1
    return bad


def write_table_csv(table: SeriesTable, path) -> None:
    """Rows ``(table, j, index, numerator, denominator)``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["table", "j", "index", "numerator", "denominator"])
        for j, row in enumerate(table.c):
            for l, v in enumerate(row):
                out.writerow(["c", j, l, v.numerator, v.denominator])
        for j, row in enumerate(table.A):
            for p, v in enumerate(row):
                out.writerow(["A", j, p, v.numerator, v.denominator])


# Mode functions ---------------------------------------------------------------------


def mode_v0(c: float, s: np.ndarray) -> tuple[np.ndarray, float]:
    """``c * int_0^s exp(-sigma^2/2)`` and its limit ``c sqrt(pi/2)``."""
    s = np.asarray(s, dtype=float)
    return c * math.sqrt(math.pi / 2) * special.erf(s / math.sqrt(2)), c * math.sqrt(math.pi / 2)


def decaying_mode(m: int, s, nu: int = 0) -> np.ndarray:
    """Decaying solution ``V_m`` of ``V'' + s V' - m V = 0`` or its derivative.

    ``nu`` selects the derivative order (0, 1 or 2).
    """
    s = np.asarray(s, dtype=float)
    big = s > 60.0
    ss = np.where(big, 0.0, s)
    d, dp = special.pbdv(-m - 1.0, ss)
    g = np.exp(-ss * ss / 4)
    v = g * d
    v1 = g * (dp - 0.5 * ss * d)
    if nu == 0:
        out = v
    elif nu == 1:
        out = v1
    elif nu == 2:
        out = m * v - ss * v1
    else:
        raise ValueError("nu must be 0, 1 or 2")
    return np.where(big, 0.0, out)


def mode_value_at_zero(m: int) -> float:
    """``V_m(0) = sqrt(pi) 2^{-(m+1)/2} / Gamma(m/2 + 1)``."""
    return math.sqrt(math.pi) * 2.0 ** (-(m + 1) / 2) / math.gamma(m / 2 + 1)


@dataclass(frozen=True)
class ModeSolution:
    """Solution ``P(s) + X(s) + beta V_m(s)`` of ``u'' + s u' - m u = R``.

    ``P`` is the polynomial part, ``X`` the decaying particular solution
    sampled on ``s`` and ``beta`` the weight of the homogeneous decaying mode.
    ``particular_d1`` is ``X'`` from the same quadratures, when known.
    """

    m: int
    poly: Polynomial
    s: np.ndarray
    particular: np.ndarray
    beta: float
    rhs_poly: Polynomial
    rhs_exp: np.ndarray
    particular_d1: np.ndarray | None = None

    def values(self) -> np.ndarray:
        return self.poly(self.s) + self.particular + self.beta * decaying_mode(self.m, self.s)


def polynomial_mode(m: int, rhs: Sequence[float], leading: float = 0.0, degree: int | None = None) -> Polynomial:
    """Polynomial ``P`` with ``P'' + s P' - m P = rhs`` and ``[s^m] P = leading``.

    ``rhs`` holds ascending coefficients of degree below ``m``; the
    coefficient of ``s^m`` is free and fixed by ``leading``.
    """
    r = list(rhs) + [0.0] * max(0, m + 1 - len(rhs))
    if any(abs(x) > 0 for x in r[m:]):
        raise PreconditionError(f"right-hand side must have degree < {m}")
    c = [0.0] * (m + 3)
    c[m] = leading
    for l in range(m - 1, -1, -1):
        c[l] = ((l + 2) * (l + 1) * c[l + 2] - r[l]) / (m - l)
    return Polynomial(c[: m + 1])


def solve_mode(m: int, rhs_poly: Sequence[float] = (), rhs_exp: Callable | None = None,
               bc0: float = 0.0, leading: float = 0.0, s: np.ndarray | None = None) -> ModeSolution:
    """Solve ``u'' + s u' - m u = R`` with ``u(0) = bc0`` and polynomial growth.

    ``R`` is a polynomial (ascending coefficients, degree below ``m``) plus an
    optional rapidly decaying callable part.  The decaying particular
    solution comes from variation of parameters with the polynomial and the
    decaying homogeneous solutions.
    """
    s = np.linspace(0.0, 12.0, 601) if s is None else np.asarray(s, dtype=float)
    if s[0] != 0.0:
        raise PreconditionError("grid must start at s = 0")
    if s[-1] > 40.0:
        raise PreconditionError("grid must stay below s = 40")
    P = polynomial_mode(m, rhs_poly, leading)
    X = np.zeros_like(s)
    X1 = np.zeros_like(s)
    R = np.zeros_like(s)
    if rhs_exp is not None:
        R = np.asarray(rhs_exp(s), dtype=float)
        if abs(R[-1]) > 1e-12 * max(1.0, np.abs(R).max()):
            raise SolverFailure("right-hand side does not decay on the grid", abs(R[-1]))
        Up = polynomial_mode(m, (), 1.0)
        U1p = Up.deriv()
        w0 = Up(0.0) * float(decaying_mode(m, 0.0, 1)) - U1p(0.0) * mode_value_at_zero(m)

        # composite Gauss-Legendre on each grid cell, summed forward for the
        # growing factor and backward for the tail integral
        xi, wi = np.polynomial.legendre.leggauss(10)
        a, b = s[:-1, None], s[1:, None]
        q = 0.5 * (a + b) + 0.5 * (b - a) * xi
        weight = np.asarray(rhs_exp(q), dtype=float) * np.exp(0.5 * q * q) / w0
        cell_u = 0.5 * (b - a)[:, 0] * ((Up(q) * weight) @ wi)
        cell_v = 0.5 * (b - a)[:, 0] * ((decaying_mode(m, q) * weight) @ wi)
        if not (np.all(np.isfinite(cell_u)) and np.all(np.isfinite(cell_v))):
            raise SolverFailure("variation-of-parameters quadrature failed", float("nan"))
        inner_u = np.concatenate([[0.0], np.cumsum(cell_u)])
        tail_v = np.concatenate([np.cumsum(cell_v[::-1])[::-1], [0.0]])
        X = decaying_mode(m, s) * inner_u + Up(s) * tail_v
        # the terms from differentiating the integrals cancel
        X1 = decaying_mode(m, s, 1) * inner_u + U1p(s) * tail_v
    beta = (bc0 - P(0.0) - X[0]) / mode_value_at_zero(m)
    rp = Polynomial(list(rhs_poly) or [0.0])
    return ModeSolution(m, P, s, X, beta, rp, R, X1)


def solve_inhomogeneous_mode(j: int, R_poly: Sequence[float] = (), bc0: float = 0.0,
                             leading: float = 0.0, R_exp: Callable | None = None,
                             s: np.ndarray | None = None) -> ModeSolution:
    """Mode ``v_j`` of the heat corner: ``v'' + s v' - j v = R``, ``v(0) = bc0``."""
    return solve_mode(j, R_poly, R_exp, bc0, leading, s)


def mode_residual(sol: ModeSolution) -> float:
    """Residual of the mode equation.

    The polynomial part is checked in exact polynomial arithmetic.  For the
    decaying part ``u'`` comes from the variation-of-parameters formula and
    only ``u''`` is a finite difference, which keeps the roundoff of the
    check near ``eps / h`` instead of ``eps / h^2``.
    """
    P = sol.poly
    x = Polynomial([0.0, 1.0])
    poly_res = P.deriv(2) + x * P.deriv() - sol.m * P - sol.rhs_poly
    poly_err = float(np.max(np.abs(poly_res.coef))) if poly_res.coef.size else 0.0
    d = sol.particular + sol.beta * decaying_mode(sol.m, sol.s)
    if sol.particular_d1 is not None:
        d1 = sol.particular_d1 + sol.beta * decaying_mode(sol.m, sol.s, 1)
        d2 = derivative(sol.s, d1, 1)
    else:
        d1 = derivative(sol.s, d, 1)
        d2 = derivative(sol.s, d, 2)
    exp_err = float(np.max(np.abs(d2 + sol.s * d1 - sol.m * d - sol.rhs_exp)[1:-1]))
    return max(poly_err, exp_err)


# Boundary data --------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    """Piecewise polynomial function on the half line.

    ``pieces[i]`` is a polynomial in the local variable ``x - breaks[i]``
    valid on ``[breaks[i], breaks[i+1])``; the last piece extends to infinity.
    """

    breaks: tuple[float, ...]
    pieces: tuple[Polynomial, ...]

    def __call__(self, x, n: int = 0):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.zeros_like(x)
        for i, p in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                q = p.deriv(n) if n else p
                out[sel] = q(x[sel] - self.breaks[i])
        return out if out.ndim else float(out)

    def _on(self, breaks: Sequence[float]) -> list[Polynomial]:
        out = []
        for b in breaks:
            i = max(0, int(np.searchsorted(self.breaks, b, side="right")) - 1)
            shift = Polynomial([b - self.breaks[i], 1.0])
            out.append(self.pieces[i](shift))
        return out

    def __mul__(self, other: "Profile") -> "Profile":
        breaks = tuple(sorted(set(self.breaks) | set(other.breaks)))
        return Profile(breaks, tuple(a * b for a, b in zip(self._on(breaks), other._on(breaks))))

    def __add__(self, other: "Profile") -> "Profile":
        breaks = tuple(sorted(set(self.breaks) | set(other.breaks)))
        return Profile(breaks, tuple(a + b for a, b in zip(self._on(breaks), other._on(breaks))))

    def scaled(self, c: float) -> "Profile":
        return Profile(self.breaks, tuple(c * p for p in self.pieces))

    def jet(self, order: int) -> np.ndarray:
        """Derivatives ``f^(n)(0)`` for ``n = 0..order``."""
        return np.array([float(self(0.0, n)) for n in range(order + 1)])

    def support(self) -> float:
        """Right end of the support (``inf`` if the last piece is nonzero)."""
        if np.any(self.pieces[-1].coef != 0):
            return math.inf
        for i in range(len(self.pieces) - 1, -1, -1):
            if np.any(self.pieces[i].coef != 0):
                return self.breaks[i + 1]
        return 0.0

    @staticmethod
    def polynomial(coef: Sequence[float]) -> "Profile":
        return Profile((0.0,), (Polynomial(list(coef)),))

    @staticmethod
    def zero() -> "Profile":
        return Profile((0.0,), (Polynomial([0.0]),))


def smoothstep(m: int) -> Polynomial:
    """Polynomial of degree ``2m+1`` rising from 0 to 1 on ``[0, 1]`` with ``m`` flat derivatives."""
    p = Polynomial([0.0, 1.0]) ** m * Polynomial([1.0, -1.0]) ** m
    S = p.integ()
    return S / S(1.0)


def plateau(a: float, b: float, smoothness: int = 8) -> Profile:
    """1 on ``[0, a]``, 0 beyond ``b``, a ``C^smoothness`` polynomial ramp between."""
    if not 0 < a < b:
        raise PreconditionError("need 0 < a < b")
    S = smoothstep(smoothness)
    ramp = 1.0 - S(Polynomial([0.0, 1.0 / (b - a)]))
    return Profile((0.0, a, b), (Polynomial([1.0]), ramp, Polynomial([0.0])))


@dataclass(frozen=True)
class BoundaryData:
    """Initial profile ``phi(x)`` and boundary profile ``psi(t)``.

    ``support`` bounds the support of both; the usual model takes it equal
    to 1, larger values let the erf benchmark see a wide plateau.
    """

    phi: Profile
    psi: Profile
    support: float = 1.0

    def __post_init__(self) -> None:
        for name, f in (("phi", self.phi), ("psi", self.psi)):
            if f.support() > self.support:
                raise PreconditionError(f"{name} is not supported in [0, {self.support})")

    @staticmethod
    def step(width: float = 3.0, ramp: float = 1.0) -> "BoundaryData":
        """``phi = 1`` on ``[0, width]``, ``psi = 0``: the incompatible erf benchmark."""
        return BoundaryData(plateau(width, width + ramp), Profile.zero(), width + ramp)


# Smooth cutoffs ---------------------------------------------------------------------


def _h(u):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)


def cutoff(r, a: float = 1.0, b: float = 2.0, nu: int = 0) -> np.ndarray:
    """``C^infinity`` cutoff equal to 1 for ``r <= a`` and 0 for ``r >= b``.

    ``nu`` in 0, 1, 2 selects the derivative with respect to ``r``.
    """
    r = np.asarray(r, dtype=float)
    k = 1.0 / (b - a)
    u = np.clip((r - a) * k, 0.0, 1.0)
    A, B = _h(u), _h(1 - u)
    inside = (u > 0) & (u < 1)
    safe = np.where(inside, u, 0.5)
    A1 = np.where(inside, A / safe**2, 0.0)
    B1 = np.where(inside, -B / (1 - safe) ** 2, 0.0)
    A2 = np.where(inside, A * (1 - 2 * safe) / safe**4, 0.0)
    B2 = np.where(inside, B * (1 - 2 * (1 - safe)) / (1 - safe) ** 4, 0.0)
    D = A + B
    D1, D2 = A1 + B1, A2 + B2
    S = A / D
    if nu == 0:
        return 1.0 - S
    S1 = (A1 * D - A * D1) / D**2
    if nu == 1:
        return -k * S1
    S2 = (A2 * D - A * D2) / D**2 - 2 * D1 * (A1 * D - A * D1) / D**3
    if nu == 2:
        return -k * k * S2
    raise ValueError("nu must be 0, 1 or 2")


# Approximate solution -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CornerField:
    """Explicit approximate solution ``v`` and its defect.

    ``v = Phi + chi_c(rho / rho0) E + chi_b(x) g(t)``:

    * ``Phi`` is the truncated Taylor flow ``sum_k t^k phi^(2k)(x) / k!``;
    * ``E = sum_j beta_j chi(j^2 tau) tau^j V_j(s)`` carries the boundary
      values ``v_j(0)`` the polynomial parts miss, cut off at ``rho =
      sqrt(t + x^2) ~ rho0``;
    * ``g`` corrects the value at ``x = 0`` so ``v(t, 0) = psi(t)`` exactly.

    The odd boundary data (the normal derivative at ``x = 0``) is left free
    and the heat-kernel correction restores it.
    """

    data: BoundaryData
    J: int
    N: int
    table: SeriesTable
    beta: np.ndarray
    rho0: float
    edge: tuple[float, float]

    # building blocks
    def _phi_flow(self, t, x, nu_t: int = 0, nu_x: int = 0):
        out = np.zeros(np.broadcast(t, x).shape)
        for k in range(nu_t, self.N + 1):
            coef = math.factorial(k) / math.factorial(k - nu_t) / math.factorial(k)
            out = out + coef * t ** (k - nu_t) * self.data.phi(x, 2 * k + nu_x)
        return out

    def _E(self, tau, s):
        """``E``, ``E_x``, ``E_xx`` and the heat defect of ``E`` at ``tau > 0``."""
        E = np.zeros(np.broadcast(tau, s).shape)
        Ex, Exx, heat = np.zeros_like(E), np.zeros_like(E), np.zeros_like(E)
        for j, b in enumerate(self.beta):
            if b == 0.0:
                continue
            chi = cutoff(j * j * tau)
            V = decaying_mode(j, s)
            V1 = decaying_mode(j, s, 1)
            V2 = decaying_mode(j, s, 2)
            E = E + b * chi * tau**j * V
            Ex = Ex + b * chi * tau ** (j - 1) * V1
            Exx = Exx + b * chi * tau ** (j - 2) * V2
            if j:
                heat = heat + b * j * j * cutoff(j * j * tau, nu=1) * tau ** (j - 1) * V
        return E, Ex, Exx, heat

    def _E0(self, tau):
        """``E(tau, 0)`` and its ``tau`` derivative."""
        E, dE = np.zeros_like(tau), np.zeros_like(tau)
        for j, b in enumerate(self.beta):
            if b == 0.0:
                continue
            V0 = mode_value_at_zero(j)
            chi, chi1 = cutoff(j * j * tau), cutoff(j * j * tau, nu=1)
            E = E + b * V0 * chi * tau**j
            dE = dE + b * V0 * (j * j * chi1 * tau**j + (chi * j * tau ** (j - 1) if j else 0.0))
        return E, dE

    def _g(self, t):
        t = np.asarray(t, dtype=float)
        tau = np.sqrt(2 * t)
        E0, dE0 = self._E0(tau)
        rho = np.sqrt(t)
        cc = cutoff(rho / self.rho0, 1.0, 2.0)
        g = self.data.psi(t) - self._phi_flow(t, 0.0) - cc * E0
        with np.errstate(divide="ignore", invalid="ignore"):
            dcc = np.where(t > 0, cutoff(rho / self.rho0, 1.0, 2.0, 1) / (2 * self.rho0 * rho), 0.0)
            dE0_dt = np.where(t > 0, dE0 / tau, 0.0)
        g1 = self.data.psi(t, 1) - self._phi_flow(t, 0.0, nu_t=1) - dcc * E0 - cc * dE0_dt
        return g, g1

    def v(self, t, x) -> np.ndarray:
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = self._phi_flow(t, x)
        pos = t > 0
        tau = np.sqrt(2 * np.where(pos, t, 1.0))
        s = x / tau
        rho = np.sqrt(t + x * x)
        E = self._E(tau, s)[0]
        cc = cutoff(rho / self.rho0)
        out = out + np.where(pos, cc * E, 0.0)
        g, _ = self._g(t)
        return out + cutoff(x, *self.edge) * g

    def defect(self, t, x) -> np.ndarray:
        """``(d_t - d_x^2) v`` from the analytic derivatives of every piece."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        f = -(t**self.N) * self.data.phi(x, 2 * self.N + 2) / math.factorial(self.N)
        pos = t > 0
        tt = np.where(pos, t, 1.0)
        tau = np.sqrt(2 * tt)
        s = x / tau
        E, Ex, _, heatE = self._E(tau, s)
        rho = np.sqrt(tt + x * x)
        c0 = cutoff(rho / self.rho0)
        c1 = cutoff(rho / self.rho0, nu=1) / self.rho0
        c2 = cutoff(rho / self.rho0, nu=2) / self.rho0**2
        rho_t = 0.5 / rho
        rho_x = x / rho
        rho_xx = 1 / rho - x * x / rho**3
        cc_t = c1 * rho_t
        cc_x = c1 * rho_x
        cc_xx = c2 * rho_x**2 + c1 * rho_xx
        # E_x carries 1/tau for j = 0 but only meets cc_x where s is large
        part = c0 * heatE + E * (cc_t - cc_xx) - 2 * cc_x * np.where(cc_x != 0, Ex, 0.0)
        f = f + np.where(pos, part, 0.0)
        g, g1 = self._g(t)
        return f + cutoff(x, *self.edge) * g1 - cutoff(x, *self.edge, nu=2) * g


def corner_targets(data: BoundaryData, J: int) -> np.ndarray:
    """Boundary values ``v_j(0)`` forced by ``psi``: even ``j = 2k`` gets ``psi^(k)(0) / (k! 2^k)``."""
    jet = data.psi.jet(J // 2)
    out = np.zeros(J + 1)
    for k in range(J // 2 + 1):
        out[2 * k] = jet[k] / (math.factorial(k) * 2**k)
    return out


def build_approximate_v(data: BoundaryData, J: int, rho0: float = 0.3,
                        edge: tuple[float, float] = (0.25, 0.5)) -> CornerField:
    """Approximate solution whose corner series matches the data to order ``J``.

    The leading coefficients are the Taylor coefficients of ``phi`` at 0; the
    Taylor flow is truncated at ``N = ceil(J/2)`` so the defect near ``t = 0``
    is ``O(t^N)``.
    """
    if J < 0:
        raise PreconditionError("J must be non-negative")
    N = (J + 1) // 2
    jet = data.phi.jet(J)
    seeds = [Fraction(jet[j]) / math.factorial(j) for j in range(J + 1)]
    targets = corner_targets(data, J)
    table = series_table(J, seeds, bc0=[Fraction(x) for x in targets])
    beta = np.array([float(table.remainders[j]) / mode_value_at_zero(j) for j in range(J + 1)])
    return CornerField(data, J, N, table, beta, rho0, edge)


def defect_order(field: CornerField, ts: Sequence[float] = (1e-3, 2e-3, 4e-3, 8e-3),
                 x: np.ndarray | None = None) -> float:
    """Observed power ``q`` in ``sup_x |f(t, x)| ~ t^q`` (``inf`` if ``f`` vanishes)."""
    x = np.linspace(0.0, 2.0 * field.data.support, 4001) if x is None else x
    sup = np.array([np.abs(field.defect(t, x)).max() for t in ts])
    if np.all(sup < 1e-300):
        return math.inf
    sup = np.maximum(sup, 1e-300)
    return float(np.polyfit(np.log(ts), np.log(sup), 1)[0])


# Heat kernel and correction -------------------------------------------------------------


def dirichlet_kernel(t, x, xt) -> np.ndarray:
    """Half-line Dirichlet heat kernel ``K(t, x - y) - K(t, x + y)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("kernel needs t > 0")
    x, xt = np.asarray(x, dtype=float), np.asarray(xt, dtype=float)
    c = 1.0 / np.sqrt(4 * np.pi * t)
    return c * (np.exp(-((x - xt) ** 2) / (4 * t)) - np.exp(-((x + xt) ** 2) / (4 * t)))


def _duhamel_rule(f: Callable, t: float, x: float, panels: int, epsabs: float) -> tuple[float, float]:
    gz, gw = np.polynomial.legendre.leggauss(16)
    zmax = 8.0

    def inner(sg: float) -> float:
        if sg <= 0:
            return 0.0
        r = t - sg * sg
        # y = x + 2 sigma z against the odd extension of f, split at y = 0
        z0 = -x / (2 * sg)
        total = 0.0
        for lo, hi in ((-zmax, min(z0, zmax)), (max(z0, -zmax), zmax)):
            if hi <= lo:
                continue
            edges = np.linspace(lo, hi, panels + 1)
            half = 0.5 * np.diff(edges)[:, None]
            z = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half * gz
            y = x + 2 * sg * z
            vals = np.sign(y) * f(np.full_like(y, r), np.abs(y))
            total += float(np.sum(half * gw * np.exp(-z * z) * vals))
        return 2 * sg * total / math.sqrt(math.pi)

    # r = t - sigma^2 keeps the integrand smooth as r -> t
    return quad(inner, 0.0, math.sqrt(t), epsabs=epsabs, epsrel=0.0, limit=400)


def duhamel_w(f: Callable, t: float, x: float, panels: int = 64, tol: float = 1e-7) -> float:
    """``w(t, x) = int_0^t int_0^inf H_D(t - r, x, y) f(r, y) dy dr`` by product quadrature.

    The method of images turns the inner integral into a Gaussian average of
    the odd extension of ``f``, done with Gauss-Legendre on each side of the
    reflection point (composite 16-point panels); the outer integral is
    adaptive in ``sigma = sqrt(t - r)``.  The result is accepted when doubling
    the number of panels changes it by at most ``tol``.
    """
    if t <= 0:
        return 0.0
    if x < 0:
        raise DomainError("x must be non-negative")
    if x == 0:
        return 0.0
    coarse, _ = _duhamel_rule(f, t, x, panels, 0.1 * tol)
    fine, err = _duhamel_rule(f, t, x, 2 * panels, 0.1 * tol)
    if abs(fine - coarse) > tol or err > tol:
        raise SolverFailure(f"Duhamel quadrature not converged at (t={t}, x={x}); "
                            f"coarse={coarse:.12g} fine={fine:.12g}", max(abs(fine - coarse), err))
    return fine


@dataclass(frozen=True, eq=False)
class HeatGrid:
    """Uniform space-time grid for the correction solve."""

    h: float
    dt: float
    T: float
    L: float

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, int(round(self.L / self.h)) + 1)

    @property
    def t(self) -> np.ndarray:
        n = int(math.ceil(self.T / self.dt - 1e-9))
        return np.linspace(0.0, n * self.dt, n + 1)


def _laplacian_banded(n: int, h: float, dt: float) -> tuple[np.ndarray, float]:
    """Banded ``I - dt/2 D2`` on interior nodes (Dirichlet ends)."""
    r = dt / (2 * h * h)
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[1, :] = 1 + 2 * r
    ab[2, :-1] = -r
    return ab, r


def crank_nicolson(source: Callable, grid: HeatGrid, u0: np.ndarray | None = None,
                   left: Callable | None = None, keep: Callable | None = None,
                   smoothing_steps: int = 0) -> np.ndarray:
    """Crank-Nicolson for ``u_t - u_xx = source`` with Dirichlet ends.

    ``source(t, x)`` is sampled at half steps.  ``left(t)`` is the value at
    ``x = 0`` (zero by default) and the right end is held at zero.  The first
    ``smoothing_steps`` are split into two backward-Euler half steps to damp
    incompatible initial data.  Returns every time level restricted to the
    columns selected by ``keep(x)`` (all by default).
    """
    x, ts = grid.x, grid.t
    n = len(x) - 2
    cols = np.ones(len(x), bool) if keep is None else keep(x)
    out = np.zeros((len(ts), int(cols.sum())))
    u = np.zeros(len(x)) if u0 is None else np.array(u0, dtype=float)
    if left is not None:
        u[0] = left(0.0)
    u[-1] = 0.0
    out[0] = u[cols]
    ab, r = _laplacian_banded(n, grid.h, grid.dt)
    be = np.zeros((3, n))
    rb = grid.dt / (2 * grid.h * grid.h)
    be[0, 1:], be[1, :], be[2, :-1] = -rb, 1 + 2 * rb, -rb
    xi = x[1:-1]
    for k in range(1, len(ts)):
        t0, t1 = ts[k - 1], ts[k]
        if k <= smoothing_steps:
            for a, b in ((t0, 0.5 * (t0 + t1)), (0.5 * (t0 + t1), t1)):
                rhs = u[1:-1] + (b - a) * source(b, xi)
                ul = 0.0 if left is None else left(b)
                rhs[0] += rb * ul
                u[1:-1] = solve_banded((1, 1), be, rhs)
                u[0] = ul
        else:
            ul0 = u[0]
            ul1 = 0.0 if left is None else left(t1)
            rhs = u[1:-1] + r * (u[2:] - 2 * u[1:-1] + u[:-2]) + grid.dt * source(0.5 * (t0 + t1), xi)
            rhs[0] += r * ul1
            u[1:-1] = solve_banded((1, 1), ab, rhs)
            u[0] = ul1
        if not np.all(np.isfinite(u)):
            raise SolverFailure("Crank-Nicolson produced non-finite values", float("inf"))
        out[k] = u[cols]
    return out


def correction_w(field: CornerField, grid: HeatGrid, keep: Callable | None = None) -> np.ndarray:
    """``w`` with ``w_t - w_xx = f``, zero initial data and ``w(t, 0) = 0``."""
    return crank_nicolson(field.defect, grid, keep=keep)


@dataclass(frozen=True, eq=False)
class HeatSolution:
    """``u = v - w`` sampled on the kept part of a space-time grid."""

    field: CornerField
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    grid: HeatGrid
    _spline: list = field(default_factory=list, repr=False)

    @property
    def v(self) -> np.ndarray:
        return self.field.v(self.t[:, None], self.x[None, :])

    @property
    def u(self) -> np.ndarray:
        return self.v - self.w

    def defect(self) -> np.ndarray:
        return self.field.defect(self.t[:, None], self.x[None, :])

    def w_at(self, t, x) -> np.ndarray:
        """Bicubic interpolation of ``w``."""
        if not self._spline:
            self._spline.append(RectBivariateSpline(self.t, self.x, self.w, kx=3, ky=3))
        return self._spline[0].ev(t, x)

    def u_at(self, t, x) -> np.ndarray:
        return self.field.v(t, x) - self.w_at(t, x)

    def write_csv(self, path, stride: int = 1) -> None:
        v, u, f = self.v, self.u, self.defect()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x", "u", "v", "w", "defect"])
            for i in range(0, len(self.t), stride):
                for k in range(0, len(self.x), stride):
                    out.writerow([f"{self.t[i]:.10g}", f"{self.x[k]:.10g}", f"{u[i, k]:.12g}",
                                  f"{v[i, k]:.12g}", f"{self.w[i, k]:.12g}", f"{f[i, k]:.12g}"])


def solve_mixed(data: BoundaryData, J: int = 4, h: float = 1 / 512, T: float = 0.1,
                L: float | None = None, dt: float | None = None, x_keep: float | None = None,
                rho0: float = 0.3) -> HeatSolution:
    """Solve the mixed problem as ``v - w`` on ``[0, T] x [0, L]``.

    ``dt`` defaults to ``h / 8`` so the Crank-Nicolson error is ``O(h^2)``.
    Only columns with ``x <= x_keep`` are stored.
    """
    field_ = build_approximate_v(data, J, rho0)
    L = 2.0 * data.support if L is None else L
    if L <= data.support:
        raise PreconditionError("domain must extend beyond the data support")
    grid = HeatGrid(h, h / 8 if dt is None else dt, T, L)
    keep = None if x_keep is None else (lambda x: x <= x_keep + 1e-12)
    w = correction_w(field_, grid, keep)
    x = grid.x if keep is None else grid.x[keep(grid.x)]
    return HeatSolution(field_, grid.t, x, w, grid)


def erf_reference(t, x) -> np.ndarray:
    """Exact solution for ``phi = 1``, ``psi = 0`` on the whole half line."""
    return special.erf(np.asarray(x) / (2 * np.sqrt(np.asarray(t, dtype=float))))


def reference_heat(data: BoundaryData, h: float = 1 / 256, T: float = 0.1,
                   L: float | None = None, dt: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Direct Crank-Nicolson solve of the mixed problem with damped start.

    Returns ``(t, x, u)``.
    """
    L = 2.0 * data.support if L is None else L
    grid = HeatGrid(h, h / 8 if dt is None else dt, T, L)
    x = grid.x
    u = crank_nicolson(lambda t, y: np.zeros_like(y), grid, u0=data.phi(x),
                       left=lambda t: float(data.psi(t)), smoothing_steps=4)
    return grid.t, x, u


def convergence_table(data: BoundaryData | None = None, hs: Sequence[float] = (1 / 128, 1 / 256, 1 / 512, 1 / 1024),
                      J: int = 4, t_range=(0.01, 0.1), x_max: float = 0.5) -> list[tuple[float, float, float]]:
    """Rows ``(h, error, ratio)`` of the L-infinity error against the erf reference."""
    data = BoundaryData.step() if data is None else data
    rows, prev = [], None
    for h in hs:
        err = erf_error(solve_mixed(data, J, h, t_range[1], x_keep=x_max), t_range, x_max)
        rows.append((h, err, math.nan if prev is None else prev / err))
        prev = err
    return rows


def erf_error(sol: HeatSolution, t_range=(0.01, 0.1), x_max: float = 0.5) -> float:
    tsel = (sol.t >= t_range[0] - 1e-12) & (sol.t <= t_range[1] + 1e-12)
    xsel = sol.x <= x_max + 1e-12
    t, x = sol.t[tsel], sol.x[xsel]
    u = sol.u[np.ix_(tsel, xsel)]
    return float(np.abs(u - erf_reference(t[:, None], x[None, :])).max())


def lifted_sup(sol: HeatSolution, tau_min: float, tau_max: float = 0.2, s_max: float = 6.0,
               n_tau: int = 201, n_s: int = 241) -> tuple[float, float]:
    """``sup |d_s u|`` and ``sup |tau d_tau u|`` over the lifted box.

    ``u`` is sampled on a grid uniform in ``log tau`` and ``s`` and
    differentiated with finite differences.
    """
    tau = np.geomspace(tau_min, tau_max, n_tau)
    s = np.linspace(0.0, s_max, n_s)
    T, S = np.meshgrid(tau, s, indexing="ij")
    U = sol.u_at(0.5 * T**2, S * T)
    du_ds = derivative(s, U.T, 1, 5).T
    du_dlog = derivative(np.log(tau), U, 1, 5)
    return float(np.abs(du_ds).max()), float(np.abs(du_dlog).max())
