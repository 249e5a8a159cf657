"""Expanding self-similar solitons as geodesic networks of ``e^{|x|^2}|dx|^2``.

A soliton slice at ``t = 1/2`` is a network whose arcs satisfy
``kappa = <eta, nu>`` with ``nu`` the left normal.  Arcs are geodesics of the
conformal metric, so they are integrated as ODEs in arclength.  A discrete
g-length minimizer supplies a starting configuration and a shooting Newton
solve polishes junction positions and launch angles to near machine accuracy.

External arcs are additionally parametrized by the similarity variable ``s``
so that ``eta''/|eta'|^2 + s eta' - eta = 0`` holds with ``|eta'| -> 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize, root

from .errors import FitFailure, PreconditionError, SolverFailure, TopologyDegenerateError
from .fd import derivative
from .geometry import left_normal, rotation, wrap_angle
from .network import Fan, PolyCurve, chord_params
from .resolution import Block, TopologyDescriptor, block_tree, enumerate_resolutions, schematic_layout

ArcKind = Literal["external", "internal", "geodesic"]

RTOL = 1e-13
ATOL = 1e-14
R_FAR = 8.0
# keeps dense-output interpolation error below finite-difference roundoff
MAX_STEP = 0.02


@dataclass(frozen=True, eq=False)
class ExpanderArc:
    """Samples of one soliton arc.

    ``s`` is the similarity parameter for external arcs and arclength for
    internal arcs.  ``direction`` is the asymptotic unit direction of the far
    end and is present only for unbounded arcs.
    """

    s: np.ndarray
    points: np.ndarray
    kind: ArcKind = "external"
    direction: np.ndarray | None = None
    tangents: np.ndarray | None = None

    def rotated(self, phi: float) -> "ExpanderArc":
        rot = rotation(phi)
        return ExpanderArc(
            self.s,
            self.points @ rot.T,
            self.kind,
            None if self.direction is None else rot @ self.direction,
            None if self.tangents is None else self.tangents @ rot.T,
        )


@dataclass(frozen=True, eq=False)
class Junction:
    """An interior vertex of a soliton network.

    ``kind`` is ``junction`` for trivalent vertices and ``pass`` for the
    artificial midpoint that splits a two-leaf geodesic into two arcs.
    """

    position: np.ndarray
    ends: tuple[tuple[int, Literal["start", "end"]], ...]
    kind: Literal["junction", "pass"] = "junction"


@dataclass(frozen=True, eq=False)
class SolitonNetwork:
    fan: Fan
    topology: TopologyDescriptor
    arcs: tuple[ExpanderArc, ...]
    junctions: tuple[Junction, ...]
    leaf_arcs: tuple[int, ...]
    radius: float
    internal_labels: tuple[str, ...] = ()
    info: dict = field(default_factory=dict)

    def junction_balance(self) -> float:
        """Largest norm of summed unit tangents over all junctions."""
        worst = 0.0
        for j in self.junctions:
            total = np.zeros(2)
            for ai, end in j.ends:
                t = self.arcs[ai].tangents
                v = t[0] if end == "start" else -t[-1]
                total += v / np.linalg.norm(v)
            worst = max(worst, float(np.linalg.norm(total)))
        return worst

    def rotated(self, phi: float) -> "SolitonNetwork":
        rot = rotation(phi)
        return SolitonNetwork(
            self.fan.rotated(phi),
            self.topology,
            tuple(a.rotated(phi) for a in self.arcs),
            tuple(Junction(rot @ j.position, j.ends, j.kind) for j in self.junctions),
            self.leaf_arcs,
            self.radius,
            self.internal_labels,
            dict(self.info),
        )

    def internal_arcs(self) -> list[int]:
        return [i for i, a in enumerate(self.arcs) if a.kind == "internal"]


# Geodesic ODEs ----------------------------------------------------------------


def _geodesic_rhs(_, u):
    x, y, th = u
    c, s = math.cos(th), math.sin(th)
    return [c, s, -x * s + y * c]


def _escape(_, u):
    return math.hypot(u[0], u[1]) - R_FAR


_escape.terminal = True
_escape.direction = 1


def shoot(p, theta: float, length: float | None = None, t_eval=None):
    """Integrate a geodesic from ``p`` at angle ``theta`` in arclength.

    With ``length`` None the integration stops when the curve leaves the
    disc of radius ``R_FAR``.
    """
    if length is None:
        sol = solve_ivp(_geodesic_rhs, (0.0, 60.0), [p[0], p[1], theta], method="DOP853",
                        rtol=RTOL, atol=ATOL, events=_escape, t_eval=t_eval)
        if sol.status != 1:
            raise SolverFailure("geodesic did not escape to infinity", float("nan"))
    else:
        sol = solve_ivp(_geodesic_rhs, (0.0, length), [p[0], p[1], theta], method="DOP853",
                        rtol=RTOL, atol=ATOL, t_eval=t_eval,
                        max_step=MAX_STEP if t_eval is not None else np.inf)
    return sol


def asymptotic_angle(p, theta: float) -> float:
    return float(shoot(p, theta).y[2, -1])


def _similarity_rhs(s, u):
    x, y, th, v = u
    c, sn = math.cos(th), math.sin(th)
    eta_t = x * c + y * sn
    eta_n = -x * sn + y * c
    return [v * c, v * sn, v * eta_n, v * v * (eta_t - s * v)]


def _speed_defect(p, theta: float, v0: float, s_far: float = R_FAR) -> float:
    sol = solve_ivp(_similarity_rhs, (0.0, s_far), [p[0], p[1], theta, v0], method="DOP853",
                    rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        return math.inf
    return float(sol.y[3, -1] - 1.0)


def initial_speed(p, theta: float) -> float:
    """Launch speed ``|eta'(0)|`` giving ``|eta'| -> 1`` at infinity."""
    lo, hi = 0.5, 2.0
    flo, fhi = _speed_defect(p, theta, lo), _speed_defect(p, theta, hi)
    for _ in range(40):
        if flo < 0 < fhi:
            break
        if flo >= 0:
            lo *= 0.5
            flo = _speed_defect(p, theta, lo)
        if fhi <= 0:
            hi *= 2.0
            fhi = _speed_defect(p, theta, hi)
    else:
        raise SolverFailure("could not bracket the launch speed", min(abs(flo), abs(fhi)))
    return brentq(lambda v: _speed_defect(p, theta, v), lo, hi, xtol=1e-15, rtol=1e-15)


def _graded(stop: float, n: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)
    return stop * (0.4 * u + 0.6 * u * u)


def external_arc(p, theta: float, radius: float, n: int = 401) -> ExpanderArc:
    """Similarity-parametrized ray from ``p`` at angle ``theta`` out to ``radius``."""
    v0 = initial_speed(p, theta)

    def leave(_, u):
        return math.hypot(u[0], u[1]) - radius

    leave.terminal = True
    leave.direction = 1
    probe = solve_ivp(_similarity_rhs, (0.0, 4.0 * radius + 10.0), [p[0], p[1], theta, v0],
                      method="DOP853", rtol=RTOL, atol=ATOL, events=leave)
    if probe.status != 1:
        raise SolverFailure("external arc did not reach the truncation radius", float("nan"))
    s_stop = float(probe.t_events[0][0])
    grid = _graded(s_stop, n)
    sol = solve_ivp(_similarity_rhs, (0.0, s_stop), [p[0], p[1], theta, v0], method="DOP853",
                    rtol=RTOL, atol=ATOL, t_eval=grid, max_step=MAX_STEP)
    th, v = sol.y[2], sol.y[3]
    tangents = v[:, None] * np.column_stack([np.cos(th), np.sin(th)])
    far = asymptotic_angle(p, theta)
    return ExpanderArc(grid, sol.y[:2].T.copy(), "external",
                       np.array([math.cos(far), math.sin(far)]), tangents)


def internal_arc(p, theta: float, length: float, spacing: float = 0.004) -> ExpanderArc:
    n = max(41, int(math.ceil(length / spacing)) + 1)
    grid = np.linspace(0.0, length, n)
    sol = shoot(p, theta, length, t_eval=grid)
    th = sol.y[2]
    return ExpanderArc(grid, sol.y[:2].T.copy(), "internal", None,
                       np.column_stack([np.cos(th), np.sin(th)]))


# Discrete g-length ----------------------------------------------------------------


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def g_length(points: np.ndarray) -> float:
    """Length of a polyline in the metric ``e^{|x|^2}|dx|^2``.

    Each segment is integrated with three-point Gauss-Legendre so long
    segments cannot cut through the cheap region near the origin.
    """
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    q = pts[:-1, None, :] + _GL_NODES[None, :, None] * seg[:, None, :]
    w = np.exp(0.5 * np.sum(q * q, axis=2)) @ _GL_WEIGHTS
    return float(np.sum(np.linalg.norm(seg, axis=1) * w))


def ray_g_length(radius: float) -> float:
    """Exact g-length of a radial segment from the origin to ``radius``."""
    from scipy.integrate import quad

    return quad(lambda r: math.exp(0.5 * r * r), 0.0, radius, epsabs=1e-13)[0]


@dataclass
class _Layout:
    """Polyline model of one block used by the discrete minimizer."""

    n_free: int
    paths: list[list[int]]
    pinned: dict[int, np.ndarray]


def _block_paths(fan: Fan, block: Block, junction_pos: dict, pass_pos, pin_radius: float, nodes: int):
    """Node index paths for each edge of a block plus an initial position vector."""
    positions: list[np.ndarray] = []
    pinned: dict[int, np.ndarray] = {}

    def new(pt, pin=False):
        positions.append(np.asarray(pt, dtype=float))
        idx = len(positions) - 1
        if pin:
            pinned[idx] = positions[-1]
        return idx

    paths = []
    edges_meta = []
    if block.size == 2:
        i, j = block.leaves
        a = new(pin_radius * fan.directions[i], True)
        m = new(pass_pos)
        b = new(pin_radius * fan.directions[j], True)
        for start, stop in ((m, a), (m, b)):
            pts = np.linspace(positions[start], positions[stop], nodes)
            path = [start] + [new(q) for q in pts[1:-1]] + [stop]
            paths.append(path)
        edges_meta = [("leaf", i), ("leaf", j)]
        return positions, pinned, paths, edges_meta, {"pass": m}
    tree = block_tree(block)
    jidx = {c: new(junction_pos[c]) for c in tree.junctions}
    for e in tree.edges:
        if e.interior:
            a, b = jidx[e.a], jidx[e.b]
            meta = ("interior", e)
        else:
            leaf = e.a if isinstance(e.a, int) else e.b
            junc = e.b if isinstance(e.a, int) else e.a
            a = jidx[junc]
            b = new(pin_radius * fan.directions[leaf], True)
            meta = ("leaf", leaf)
        pts = np.linspace(positions[a], positions[b], nodes)
        paths.append([a] + [new(q) for q in pts[1:-1]] + [b])
        edges_meta.append(meta)
    return positions, pinned, paths, edges_meta, jidx


def _minimize_block(positions, pinned, paths, spring: float = 1e-3):
    x0 = np.array(positions)
    free = np.array([i not in pinned for i in range(len(x0))])

    def energy(z):
        pts = x0.copy()
        pts[free] = z.reshape(-1, 2)
        grad = np.zeros_like(pts)
        total = 0.0
        for path in paths:
            p = pts[path]
            seg = np.diff(p, axis=0)
            ln = np.linalg.norm(seg, axis=1)
            q = p[:-1, None, :] + _GL_NODES[None, :, None] * seg[:, None, :]
            e = np.exp(0.5 * np.sum(q * q, axis=2)) * _GL_WEIGHTS
            w = e.sum(axis=1)
            total += float(np.sum(ln * w) + spring * np.sum(ln * ln))
            dl = seg / ln[:, None]
            gseg = w[:, None] * dl + 2 * spring * seg
            eq = ln[:, None, None] * e[:, :, None] * q
            g = np.zeros_like(p)
            g[1:] += gseg + np.einsum("k,skd->sd", _GL_NODES, eq)
            g[:-1] += -gseg + np.einsum("k,skd->sd", 1 - _GL_NODES, eq)
            np.add.at(grad, path, g)
        return total, grad[free].ravel()

    res = minimize(energy, x0[free].ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": 20000, "gtol": 1e-10, "ftol": 1e-15})
    pts = x0.copy()
    pts[free] = res.x.reshape(-1, 2)
    return pts


def _polyline_length(p: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _launch_angle(p: np.ndarray) -> float:
    """Direction at the first node of a polyline from a quadratic fit."""
    k = min(4, len(p) - 1)
    u = chord_params(p[: k + 1]) * _polyline_length(p[: k + 1])
    cx = np.polyfit(u, p[: k + 1, 0], min(2, k))
    cy = np.polyfit(u, p[: k + 1, 1], min(2, k))
    return math.atan2(cy[-2], cx[-2])


def _unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def _newton(residual, z0, tol: float = 1e-12, maxiter: int = 30):
    """Hybrid-Powell globalization followed by a central-difference Newton polish."""
    res = root(residual, z0, method="hybr", options={"xtol": 1e-13, "maxfev": 2000})
    z = res.x
    f = residual(z)
    err = float(np.abs(f).max())
    h = 1e-7
    for _ in range(maxiter):
        if err < tol:
            break
        jac = np.empty((len(f), len(z)))
        for i in range(len(z)):
            dz = np.zeros_like(z)
            dz[i] = h
            jac[:, i] = (residual(z + dz) - residual(z - dz)) / (2 * h)
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        lam = 1.0
        while lam > 1e-3:
            trial = z + lam * step
            try:
                ft = residual(trial)
            except SolverFailure:
                ft = None
            if ft is not None and np.abs(ft).max() < err:
                break
            lam *= 0.5
        else:
            break
        z, f, err = trial, ft, float(np.abs(ft).max())
    return z, err


def _solve_tree_block(fan: Fan, block: Block, init_junctions: dict, init_angles: dict,
                      init_interior: dict, label) -> tuple[dict, dict, dict]:
    """Shooting Newton solve of one tree block.

    Unknowns are junction positions, one launch angle per leaf edge and a
    launch angle plus length per interior edge.
    """
    tree = block_tree(block)
    juncs = list(tree.junctions)
    leaf_edges = [e for e in tree.edges if not e.interior]
    int_edges = [e for e in tree.edges if e.interior]
    alpha = fan.angles
    nj = len(juncs)

    def unpack(z):
        pos = {c: z[2 * i:2 * i + 2] for i, c in enumerate(juncs)}
        off = 2 * nj
        ang = {}
        for e in leaf_edges:
            ang[e] = z[off]
            off += 1
        inner = {}
        for e in int_edges:
            inner[e] = (z[off], z[off + 1])
            off += 2
        return pos, ang, inner

    z0 = []
    for c in juncs:
        z0.extend(init_junctions[c])
    for e in leaf_edges:
        z0.append(init_angles[e])
    for e in int_edges:
        z0.extend(init_interior[e])
    z0 = np.array(z0, dtype=float)

    def residual(z):
        pos, ang, inner = unpack(z)
        out = []
        tsum = {c: np.zeros(2) for c in juncs}
        for e in leaf_edges:
            leaf = e.a if isinstance(e.a, int) else e.b
            junc = e.b if isinstance(e.a, int) else e.a
            th = ang[e]
            out.append(float(wrap_angle(asymptotic_angle(pos[junc], th) - alpha[leaf])))
            tsum[junc] += _unit(th)
        for e in int_edges:
            th, ln = inner[e]
            sol = shoot(pos[e.a], th, abs(ln) if ln != 0 else 1e-12)
            end = sol.y[:, -1]
            out.extend(end[:2] - pos[e.b])
            tsum[e.a] += _unit(th)
            tsum[e.b] -= _unit(end[2])
        for c in juncs:
            out.extend(tsum[c])
        return np.array(out)

    z, err = _newton(residual, z0)
    pos, ang, inner = unpack(z)
    for e in int_edges:
        if inner[e][1] <= 1e-6:
            raise TopologyDegenerateError("interior edge collapsed", label(e), err)
    if err > 1e-10:
        raise SolverFailure("soliton Newton solve did not converge", err)
    return pos, ang, inner


def _solve_pair_block(fan: Fan, block: Block, rho0: float, theta0: float) -> tuple[np.ndarray, float]:
    """Single geodesic asymptotic to two rays: unknown offset on the bisector and angle."""
    i, j = block.leaves
    alpha = fan.angles
    bis = fan.directions[i] + fan.directions[j]
    if np.linalg.norm(bis) < 1e-12:
        bis = left_normal(fan.directions[i])
    bis = bis / np.linalg.norm(bis)

    def residual(z):
        p = z[0] * bis
        return np.array([
            float(wrap_angle(asymptotic_angle(p, z[1]) - alpha[j])),
            float(wrap_angle(asymptotic_angle(p, z[1] + math.pi) - alpha[i])),
        ])

    z, err = _newton(residual, np.array([rho0, theta0]))
    if err > 1e-10:
        raise SolverFailure("two-leaf geodesic did not converge", err)
    return z[0] * bis, float(z[1])


def _edge_label(block: Block):
    def label(e) -> str:
        side = sorted(e.a, key=block.leaves.index)
        rest = [l for l in block.leaves if l not in e.a]
        return "".join(str(l + 1) for l in rest) + "|" + "".join(str(l + 1) for l in side)

    return label


def solve_soliton(fan: Fan, topology: TopologyDescriptor, R: float = 4.0, nodes: int = 24,
                  samples: int = 401, seed: int = 0) -> SolitonNetwork:
    """Expanding soliton for ``fan`` with the given resolution topology.

    The fan centre is ignored; the soliton lives in similarity coordinates
    centred at the origin.  ``seed`` only labels the run, the solver is
    deterministic.
    """
    if topology.k != fan.k:
        raise PreconditionError(f"topology has k={topology.k}, fan has k={fan.k}")
    if fan.k < 3 and topology.connected:
        raise PreconditionError("fan needs at least three rays")
    centred = Fan(np.zeros(2), fan.directions, fan.sources)
    layout = schematic_layout(centred, topology, scale=0.5)
    pin_radius = min(R, 3.0)
    arcs: list[ExpanderArc] = []
    junctions: list[Junction] = []
    leaf_arcs = [-1] * fan.k
    labels: list[str] = []
    for bi, block in enumerate(topology.blocks):
        label = _edge_label(block)
        jpos = {c: layout[("junction", bi, c)] for c in block_tree(block).junctions} if block.size > 2 else {}
        pos_list, pinned, paths, meta, handles = _block_paths(
            centred, block, jpos, layout.get(("pass", bi)), pin_radius, nodes)
        pts = _minimize_block(pos_list, pinned, paths)
        if block.size == 2:
            m = handles["pass"]
            p0 = pts[m]
            towards_j = pts[paths[1]]
            th0 = _launch_angle(towards_j)
            bis = centred.directions[block.leaves[0]] + centred.directions[block.leaves[1]]
            bis = bis / np.linalg.norm(bis) if np.linalg.norm(bis) > 1e-12 else left_normal(centred.directions[block.leaves[0]])
            p, th = _solve_pair_block(centred, block, float(p0 @ bis), th0)
            a_j = external_arc(p, th, R, samples)
            a_i = external_arc(p, th + math.pi, R, samples)
            arcs.extend([a_i, a_j])
            ii, jj = len(arcs) - 2, len(arcs) - 1
            leaf_arcs[block.leaves[0]] = ii
            leaf_arcs[block.leaves[1]] = jj
            junctions.append(Junction(p, ((ii, "start"), (jj, "start")), "pass"))
            continue
        tree = block_tree(block)
        init_j = {c: pts[handles[c]] for c in tree.junctions}
        init_a, init_i = {}, {}
        for (kind, info), path, e in zip(meta, paths, tree.edges):
            poly = pts[path]
            if e.interior:
                ln = _polyline_length(poly)
                if ln < 0.02:
                    raise TopologyDegenerateError("interior edge collapsed during minimization", label(e), ln)
                init_i[e] = (_launch_angle(poly), ln)
            else:
                init_a[e] = _launch_angle(poly)
        pos, ang, inner = _solve_tree_block(centred, block, init_j, init_a, init_i, label)
        base = len(junctions)
        jindex = {c: base + n for n, c in enumerate(tree.junctions)}
        ends: dict[int, list] = {jindex[c]: [] for c in tree.junctions}
        for e in tree.edges:
            if e.interior:
                th, ln = inner[e]
                arcs.append(internal_arc(pos[e.a], th, ln))
                ends[jindex[e.a]].append((len(arcs) - 1, "start"))
                ends[jindex[e.b]].append((len(arcs) - 1, "end"))
                labels.append(label(e))
            else:
                leaf = e.a if isinstance(e.a, int) else e.b
                junc = e.b if isinstance(e.a, int) else e.a
                arcs.append(external_arc(pos[junc], ang[e], R, samples))
                ends[jindex[junc]].append((len(arcs) - 1, "start"))
                leaf_arcs[leaf] = len(arcs) - 1
        for c in tree.junctions:
            junctions.append(Junction(np.asarray(pos[c], dtype=float), tuple(ends[jindex[c]])))
    return SolitonNetwork(fan, topology, tuple(arcs), tuple(junctions), tuple(leaf_arcs), R,
                          tuple(labels), {"seed": seed, "nodes": nodes})


def geodesic_bvp(theta1: float, theta2: float, R: float = 4.0, samples: int = 401) -> ExpanderArc:
    """Complete geodesic asymptotic to the rays at ``theta1`` and ``theta2``.

    The arc runs from the ``theta1`` end to the ``theta2`` end; its parameter
    is signed arclength measured from the crossing with the bisector.
    """
    if abs(wrap_angle(theta2 - theta1)) < 1e-12:
        raise PreconditionError("the two angles must differ")
    fan = Fan.from_angles([theta1, theta2])
    block = Block((0, 1))
    bis = fan.directions[0] + fan.directions[1]
    rho0 = 0.5 * np.linalg.norm(bis) if np.linalg.norm(bis) > 1e-12 else 0.0
    theta0 = theta1 + 0.5 * float(np.mod(theta2 - theta1, 2 * math.pi)) + 0.5 * math.pi
    theta0 = theta0 if np.linalg.norm(bis) > 1e-12 else theta2
    p, th = _solve_pair_block(fan, block, rho0, theta0)
    halves = []
    for ang in (th + math.pi, th):
        def leave(_, u):
            return math.hypot(u[0], u[1]) - R

        leave.terminal = True
        leave.direction = 1
        probe = solve_ivp(_geodesic_rhs, (0.0, 60.0), [p[0], p[1], ang], method="DOP853",
                          rtol=RTOL, atol=ATOL, events=leave)
        stop = float(probe.t_events[0][0])
        grid = np.linspace(0.0, stop, samples // 2 + 1)
        sol = shoot(p, ang, stop, t_eval=grid)
        halves.append((grid, sol.y))
    (g1, y1), (g2, y2) = halves
    s = np.concatenate([-g1[::-1], g2[1:]])
    pts = np.vstack([y1[:2].T[::-1], y2[:2].T[1:]])
    th_all = np.concatenate([y1[2][::-1] + math.pi, y2[2][1:]])
    far = asymptotic_angle(p, th)
    return ExpanderArc(s, pts, "geodesic", _unit(far), np.column_stack([np.cos(th_all), np.sin(th_all)]))


# Diagnostics ----------------------------------------------------------------------


def _derivs(arc: ExpanderArc, width: int = 9):
    d1 = derivative(arc.s, arc.points, 1, width)
    d2 = derivative(arc.s, arc.points, 2, width)
    return d1, d2


def soliton_residual(arc: ExpanderArc) -> float:
    """Max of ``|kappa - <eta, nu>|`` from finite differences of the samples."""
    if len(arc.s) < 3:
        raise PreconditionError("need at least three samples")
    d1, d2 = _derivs(arc, min(9, len(arc.s)))
    speed = np.linalg.norm(d1, axis=1)
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    nu = left_normal(d1) / speed[:, None]
    return float(np.max(np.abs(kappa - np.sum(arc.points * nu, axis=1))))


def soleq_residual(arc: ExpanderArc) -> float:
    """Max norm of ``eta''/|eta'|^2 + s eta' - eta`` on interior nodes."""
    if arc.kind != "external":
        raise PreconditionError("the parametrized equation applies to external arcs")
    d1, d2 = _derivs(arc)
    res = d2 / np.sum(d1 * d1, axis=1)[:, None] + arc.s[:, None] * d1 - arc.points
    return float(np.max(np.linalg.norm(res[1:-1], axis=1)))


@dataclass(frozen=True)
class DecayReport:
    slope: float
    window: tuple[float, float]
    mu_norms: np.ndarray
    s_values: np.ndarray


def asymptotic_fit(arc: ExpanderArc, window: tuple[float, float] = (2.0, 4.0),
                   floor: float = 1e-10) -> tuple[np.ndarray, DecayReport]:
    """Asymptotic direction and the Gaussian decay rate of ``s eta' - eta``.

    The slope is the least-squares slope of ``log|s eta' - eta|`` against
    ``s^2`` on ``window``; an identically vanishing remainder reports
    ``-inf``; ``floor`` sits above the finite-difference roundoff of ``mu``.
    """
    if arc.kind != "external":
        raise PreconditionError("asymptotic fit needs an external arc")
    if arc.s[-1] < 3.0:
        raise PreconditionError("external arc must reach s >= 3")
    tail = arc.s >= 0.9 * arc.s[-1]
    a = np.mean(arc.points[tail] / arc.s[tail, None], axis=0)
    d1, _ = _derivs(arc)
    mu = np.linalg.norm(arc.s[:, None] * d1 - arc.points, axis=1)
    lo, hi = window[0], min(window[1], arc.s[-1])
    sel = (arc.s >= lo) & (arc.s <= hi)
    m = mu[sel]
    if np.all(m < floor):
        return a, DecayReport(-math.inf, (lo, hi), m, arc.s[sel])
    if np.any(m < floor) or np.any(np.diff(m) > 0):
        raise FitFailure(f"remainder is not monotonically decaying on [{lo}, {hi}]: {m.min():.3e}..{m.max():.3e}")
    slope = float(np.polyfit(arc.s[sel] ** 2, np.log(m), 1)[0])
    return a, DecayReport(slope, (lo, hi), m, arc.s[sel])


# Physical slices ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolitonPatch:
    """A scaled, truncated soliton ready to be spliced into a network.

    ``curves[i]`` starts at ``starts[i]`` and ends at ``stops[i]``; node labels
    are ``("j", n)`` for junction ``n`` or ``("leaf", l)`` for the boundary
    point on ray ``l``.  ``positions`` maps labels to coordinates.
    """

    curves: tuple[PolyCurve, ...]
    starts: tuple[object, ...]
    stops: tuple[object, ...]
    positions: dict
    kinds: dict
    scale: float
    radius: float


def _clip(points: np.ndarray, r: float) -> np.ndarray:
    rad = np.linalg.norm(points, axis=1)
    if rad[-1] <= r:
        return points
    idx = int(np.argmax(rad > r))
    a, b = points[idx - 1], points[idx]
    ra, rb = rad[idx - 1], rad[idx]
    t = (r - ra) / (rb - ra)
    cut = a + t * (b - a)
    cut *= r / np.linalg.norm(cut)
    return np.vstack([points[:idx], cut])


def truncate_and_scale(sol: SolitonNetwork, t0: float, r: float) -> SolitonPatch:
    """Physical slice ``sqrt(2 t0) * eta`` restricted to the ball of radius ``r``."""
    if t0 <= 0:
        raise PreconditionError("t0 must be positive")
    lam = math.sqrt(2.0 * t0)
    if r > sol.radius * lam * (1 + 1e-12):
        raise ValueError(f"excision radius {r} exceeds the truncation radius {sol.radius * lam}")
    start_of: dict[int, object] = {}
    stop_of: dict[int, object] = {}
    positions, kinds = {}, {}
    for n, j in enumerate(sol.junctions):
        label = ("j", n)
        positions[label] = lam * j.position
        kinds[label] = "interior" if j.kind == "junction" else "pass"
        for ai, end in j.ends:
            (start_of if end == "start" else stop_of)[ai] = label
    curves, starts, stops = [], [], []
    leaf_of = {ai: l for l, ai in enumerate(sol.leaf_arcs)}
    for ai, arc in enumerate(sol.arcs):
        pts = lam * arc.points
        if arc.kind == "internal":
            if np.max(np.linalg.norm(pts, axis=1)) > r:
                raise ValueError("interior edge leaves the excision ball; increase r")
        else:
            pts = _clip(pts, r)
            label = ("leaf", leaf_of[ai])
            positions[label] = pts[-1]
            kinds[label] = "exterior"
            stop_of[ai] = label
        curves.append(PolyCurve(chord_params(pts), pts))
        starts.append(start_of[ai])
        stops.append(stop_of[ai])
    return SolitonPatch(tuple(curves), tuple(starts), tuple(stops), positions, kinds, lam, r)


def patch_network(patch: SolitonPatch):
    """The patch as a standalone network with exterior ends on the circle."""
    from .resolution import Piece, assemble

    nodes = {lab: (patch.kinds[lab], patch.positions[lab]) for lab in patch.positions}
    pieces = [Piece(a, b, c.points) for a, b, c in zip(patch.starts, patch.stops, patch.curves)]
    return assemble(nodes, pieces)


def fan_g_length(fan: Fan, R: float) -> float:
    return fan.k * ray_g_length(R)


def network_g_length(sol: SolitonNetwork, R: float | None = None) -> float:
    R = sol.radius if R is None else R
    return float(sum(g_length(_clip(a.points, R)) for a in sol.arcs))


def all_solitons(fan: Fan, allow_disconnected: bool = False, R: float = 4.0) -> dict[str, SolitonNetwork]:
    """Solve every enumerated topology, skipping those that degenerate."""
    out = {}
    for desc in enumerate_resolutions(fan, allow_disconnected):
        try:
            out[str(desc)] = solve_soliton(fan, desc, R)
        except TopologyDegenerateError:
            continue
    return out
