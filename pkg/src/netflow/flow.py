"""Time stepping for the parametrized network flow ``gamma_t = gamma_xx / |gamma_x|^2``.

Every curve carries a uniform parameter grid.  One step freezes the
coefficient ``1/|gamma_x|^2`` at the old state and treats the second
difference implicitly, so each open curve needs one tridiagonal solve.  The
new interior nodes depend affinely on the two endpoint values, which turns the
junction conditions (shared endpoint, unit tangents summing to zero) into a
small nonlinear system in the junction positions, solved by Newton.

Irregular vertices are resolved at a positive time ``t0`` by splicing in a
scaled expanding soliton; short internal edges are detected, contracted and
restarted with a chosen resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import diags
from scipy.sparse.linalg import spsolve

from .errors import (
    DegenerateParametrizationError,
    NetflowError,
    PreconditionError,
    SolverFailure,
    StartupError,
    StepFailure,
    UnsupportedSingularityError,
)
from .expander import SolitonNetwork, SolitonPatch, _clip, solve_soliton, truncate_and_scale
from .geometry import hausdorff, left_normal
from .network import Network, PolyCurve, Vertex, check_regular, extract_fans
from .resolution import Piece, TopologyDescriptor, assemble, predicted_counts

Boundary = Callable[[float, int], np.ndarray]

# one-sided second-order weights for the derivative at an end, in units of h
_END_W = np.array([-1.5, 2.0, -0.5])
SPEED_FLOOR = 1e-6
DEFAULT_CFL = 100.0


# States ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JunctionRecord:
    vertex: int
    incident: tuple[tuple[int, str], ...]
    position: np.ndarray


@dataclass(frozen=True, eq=False)
class FlowState:
    """Network at time ``t`` with pinned exterior positions.

    ``exterior`` keeps the positions exterior vertices must take; they are
    copied bit for bit into every new state.  ``boundary`` optionally moves
    exterior vertices in time instead (used by the self-similarity check).
    """

    t: float
    network: Network
    exterior: Mapping[int, np.ndarray]
    boundary: Boundary | None = None
    history: tuple[tuple[float, Network], ...] = ()
    steps: int = 0

    @classmethod
    def initial(cls, net: Network, t: float = 0.0, boundary: Boundary | None = None) -> "FlowState":
        net = uniform_grid(net)
        ext = {vi: np.array(v.position) for vi, v in enumerate(net.vertices) if v.kind == "exterior"}
        return cls(t, net, ext, boundary)

    @property
    def junctions(self) -> tuple[JunctionRecord, ...]:
        net = self.network
        return tuple(
            JunctionRecord(vi, v.incident, np.array(v.position))
            for vi, v in enumerate(net.vertices)
            if v.kind == "interior"
        )

    def length(self) -> float:
        return self.network.total_length()


def uniform_grid(net: Network) -> Network:
    """Same samples with uniform parameter grids and endpoints snapped to vertices."""
    curves = [c.points.copy() for c in net.curves]
    for v in net.vertices:
        for ci, end in v.incident:
            curves[ci][0 if end == "start" else -1] = v.position
    new = tuple(PolyCurve(np.linspace(0.0, 1.0, len(p)), p, c.closed) for p, c in zip(curves, net.curves))
    return Network(new, net.vertices, net.tol)


def _with_points(net: Network, points: Sequence[np.ndarray], positions: Mapping[int, np.ndarray]) -> Network:
    curves = tuple(PolyCurve(c.params, p, c.closed) for c, p in zip(net.curves, points))
    verts = tuple(
        Vertex(v.kind, tuple(positions[vi]) if vi in positions else v.position, v.incident)
        for vi, v in enumerate(net.vertices)
    )
    return Network(curves, verts, net.tol)


def mesh_size(net: Network) -> float:
    """Longest segment in the network."""
    return max(float(np.max(np.linalg.norm(np.diff(c.points, axis=0), axis=1))) for c in net.curves)


def stability_bound(state: FlowState | Network, cfl: float = DEFAULT_CFL) -> float:
    """Time step bound ``cfl * min h^2 |gamma_x|^2`` over all curves.

    The semi-implicit scheme is linearly stable for any step; this bound keeps
    the lagged coefficient and the junction coupling accurate.
    """
    net = state.network if isinstance(state, FlowState) else state
    worst = math.inf
    for c in net.curves:
        p = np.vstack([c.points, c.points[:2]]) if c.closed else c.points
        half = 0.5 * np.linalg.norm(p[2:] - p[:-2], axis=1)
        worst = min(worst, float(np.min(half)) ** 2)
    return cfl * worst


def curvature(points: np.ndarray, closed: bool = False) -> np.ndarray:
    """Signed curvature at interior nodes from circles through three neighbours."""
    p = np.vstack([points[-1:], points, points[:1]]) if closed else points
    a, b, c = p[:-2], p[1:-1], p[2:]
    u, v = b - a, c - b
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    den = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1) * np.linalg.norm(c - a, axis=1)
    return 2.0 * cross / den


def max_curvature(net: Network) -> float:
    return max(float(np.max(np.abs(curvature(c.points, c.closed)))) for c in net.curves)


def herring_residual(net: Network) -> float:
    """Largest norm of summed unit tangents over the interior vertices."""
    worst = 0.0
    for vi in net.interior_vertices():
        v = net.vertices[vi]
        total = sum(net.curves[c].end_tangent(e) for c, e in v.incident)
        worst = max(worst, float(np.linalg.norm(total)))
    return worst


def coincidence_residual(net: Network) -> float:
    """Largest distance between a vertex and the curve ends attached to it."""
    worst = 0.0
    for v in net.vertices:
        for ci, end in v.incident:
            gap = np.linalg.norm(net.curves[ci].endpoint(end) - np.array(v.position))
            worst = max(worst, float(gap))
    return worst


# One step ---------------------------------------------------------------------------


@dataclass
class _CurveSolve:
    """New nodes as ``G + A X_start + C X_end`` (A, C scalar profiles)."""

    G: np.ndarray
    A: np.ndarray
    C: np.ndarray

    def end_affine(self, end: str):
        """Tangent ``g + alpha X_own + beta X_other`` at an end, pointing inward."""
        if end == "start":
            idx = [0, 1, 2]
            own, other = self.A, self.C
        else:
            idx = [-1, -2, -3]
            own, other = self.C, self.A
        g = _END_W @ self.G[idx]
        return g, float(_END_W @ own[idx]), float(_END_W @ other[idx])

    def nodes(self, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
        return self.G + self.A[:, None] * x0 + self.C[:, None] * x1


def _speed_check(ci: int, points: np.ndarray, closed: bool, floor: float) -> np.ndarray:
    p = np.vstack([points[-1:], points, points[:1]]) if closed else points
    half = 0.5 * np.linalg.norm(p[2:] - p[:-2], axis=1)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    length = float(seg.sum())
    n = len(points) if closed else len(points) - 1
    # |gamma_x| = n * segment length on a uniform grid
    if n * float(np.min(seg)) < floor * length:
        raise DegenerateParametrizationError(f"curve {ci}: parametrization speed below floor")
    return half


def _solve_open(points: np.ndarray, dt: float, half: np.ndarray) -> _CurveSolve:
    n = len(points)
    r = dt / half**2
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = -r[:-1]
    ab[1] = 1.0 + 2.0 * r
    ab[2, :-1] = -r[1:]
    rhs = np.zeros((m, 4))
    rhs[:, :2] = points[1:-1]
    rhs[0, 2] = r[0]
    rhs[-1, 3] = r[-1]
    sol = solve_banded((1, 1), ab, rhs)
    G = np.zeros((n, 2))
    A = np.zeros(n)
    C = np.zeros(n)
    G[1:-1] = sol[:, :2]
    A[1:-1], C[1:-1] = sol[:, 2], sol[:, 3]
    A[0], C[-1] = 1.0, 1.0
    return _CurveSolve(G, A, C)


def _solve_closed(points: np.ndarray, dt: float, half: np.ndarray) -> np.ndarray:
    n = len(points)
    r = dt / half**2
    mat = diags([1.0 + 2.0 * r, -r[:-1], -r[1:]], [0, 1, -1], shape=(n, n), format="lil")
    mat[0, n - 1] = -r[0]
    mat[n - 1, 0] = -r[-1]
    return spsolve(mat.tocsc(), points)


def step(state: FlowState, dt: float, newton_tol: float = 1e-12, maxiter: int = 40,
         floor: float = SPEED_FLOOR) -> FlowState:
    """Advance the network by ``dt``.

    Curves are advanced with the lagged-coefficient implicit scheme; the
    junction positions solve ``sum_j tau_j = 0`` at every interior vertex by a
    joint Newton iteration, and exterior ends are pinned (or moved by
    ``state.boundary``).

    Raises
    ------
    StepFailure
        Newton did not converge; ``vertex`` is the worst junction.
    DegenerateParametrizationError
        Some ``|gamma_x|`` fell below ``floor`` times the curve length.
    """
    if not dt > 0:
        raise PreconditionError("time step must be positive")
    net = state.network
    t_new = state.t + dt
    solves: dict[int, _CurveSolve] = {}
    points: list[np.ndarray | None] = [None] * len(net.curves)
    for ci, c in enumerate(net.curves):
        half = _speed_check(ci, c.points, c.closed, floor)
        if c.closed:
            points[ci] = _solve_closed(c.points, dt, half)
        else:
            solves[ci] = _solve_open(c.points, dt, half)

    fixed: dict[int, np.ndarray] = {}
    for vi, v in enumerate(net.vertices):
        if v.kind == "exterior":
            fixed[vi] = state.boundary(t_new, vi) if state.boundary is not None else state.exterior[vi]
    junctions = net.interior_vertices()
    slot = {vi: k for k, vi in enumerate(junctions)}
    end_vertex: dict[tuple[int, str], int] = {}
    for vi, v in enumerate(net.vertices):
        for key in v.incident:
            end_vertex[key] = vi

    def endpoint(z, vi):
        return z[slot[vi]] if vi in slot else fixed[vi]

    terms = []
    for k, vi in enumerate(junctions):
        for ci, end in net.vertices[vi].incident:
            other_end = "end" if end == "start" else "start"
            g, alpha, beta = solves[ci].end_affine(end)
            terms.append((k, g, alpha, end_vertex[(ci, other_end)], beta))

    def residual(z):
        F = np.zeros((len(junctions), 2))
        Jm = np.zeros((len(junctions), 2, len(junctions), 2))
        for k, g, alpha, other, beta in terms:
            d = g + alpha * z[k] + beta * endpoint(z, other)
            nd = float(np.linalg.norm(d))
            if not nd > 0:
                raise StepFailure("vanishing junction tangent", junctions[k], math.inf)
            u = d / nd
            F[k] += u
            P = (np.eye(2) - np.outer(u, u)) / nd
            Jm[k, :, k, :] += alpha * P
            if other in slot:
                Jm[k, :, slot[other], :] += beta * P
        return F, Jm.reshape(2 * len(junctions), 2 * len(junctions))

    z = np.array([net.vertices[vi].position for vi in junctions], dtype=float).reshape(-1, 2)
    if junctions:
        F, Jm = residual(z)
        err = float(np.max(np.abs(F)))
        for _ in range(maxiter):
            if err <= newton_tol:
                break
            try:
                dz = np.linalg.solve(Jm, -F.ravel()).reshape(-1, 2)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            while True:
                trial = z + lam * dz
                F_t, J_t = residual(trial)
                e_t = float(np.max(np.abs(F_t)))
                if e_t < err or lam < 1e-4:
                    break
                lam *= 0.5
            z, F, Jm, err = trial, F_t, J_t, e_t
        if not err <= max(newton_tol, 1e-10):
            worst = int(np.argmax(np.linalg.norm(F, axis=1)))
            raise StepFailure("junction Newton did not converge", junctions[worst], err)

    positions = dict(fixed)
    positions.update({vi: z[slot[vi]] for vi in junctions})
    for ci, sv in solves.items():
        a = end_vertex[(ci, "start")]
        b = end_vertex[(ci, "end")]
        x0, x1 = positions[a], positions[b]
        pts = sv.nodes(x0, x1)
        pts[0], pts[-1] = x0, x1
        points[ci] = pts
    new_net = _with_points(net, points, positions)
    return FlowState(t_new, new_net, state.exterior, state.boundary, state.history, state.steps + 1)


# Evolution ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Snapshots and per-step audit of a run."""

    snapshots: list[tuple[float, Network]]
    times: list[float]
    lengths: list[float]
    final: FlowState
    audit: dict = field(default_factory=dict)
    event: "TransitionEvent | None" = None

    def at(self, t: float) -> Network:
        for ts, net in self.snapshots:
            if abs(ts - t) <= 1e-12 * max(1.0, abs(t)):
                return net
        raise KeyError(f"no snapshot at t={t}")


def concatenate(*parts: Trajectory) -> Trajectory:
    """Join trajectories run on consecutive time intervals."""
    snaps, times, lengths = [], [], []
    audit: dict = {"segments": []}
    for p in parts:
        snaps += p.snapshots
        times += p.times
        lengths += p.lengths
        audit["segments"].append(p.audit)
    return Trajectory(snaps, times, lengths, parts[-1].final, audit, parts[-1].event)


def _pos_def_min(net: Network) -> float:
    worst = math.inf
    for vi in net.interior_vertices():
        if net.vertices[vi].valence == 3:
            worst = min(worst, boundary_operator_at(net, vi).eigenvalues[0])
    return worst


def evolve(state: FlowState, t_end: float, snapshots: Iterable[float] = (), dt: float = 1e-3,
           cfl: float = DEFAULT_CFL, length_tol: float = 1e-10, resample_every: int | None = None,
           detect: dict | None = None, max_steps: int = 2_000_000, min_dt: float = 1e-14) -> Trajectory:
    """Step from ``state.t`` to ``t_end`` with ``dt_k = min(dt, stability_bound)``.

    Steps that raise the total length by more than ``length_tol`` (pinned
    boundaries only) or whose junction solve fails are retried with half the
    step.  ``detect`` enables transition detection with keys ``eps_edge`` and
    ``kappa_cap``; missing values default to three times the initial mesh size
    and ten times the initial maximal curvature.  The run stops at the first
    event.

    Returns
    -------
    Trajectory
        Snapshots at the requested times (and at the start and end), every
        accepted time and length, and an audit of the junction invariants.
    """
    if t_end < state.t:
        raise PreconditionError("t_end precedes the current time")
    marks = sorted(t for t in set(float(s) for s in snapshots) if state.t < t < t_end) + [t_end]
    eps_edge = kappa_cap = None
    if detect is not None:
        eps_edge = detect.get("eps_edge", 3.0 * mesh_size(state.network))
        kappa_cap = detect.get("kappa_cap", 10.0 * max_curvature(state.network))
    monotone = state.boundary is None
    snaps = [(state.t, state.network)]
    times, lengths = [state.t], [state.length()]
    audit = {"max_coincidence": 0.0, "max_herring": 0.0, "length_violations": 0,
             "exterior_pinned": True, "min_boundary_eigenvalue": _pos_def_min(state.network),
             "retries": 0, "steps": 0}
    diam = state.network.diameter()
    cur = state
    event = None
    mi = 0
    for _ in range(max_steps):
        if mi >= len(marks):
            break
        target = marks[mi]
        h = min(dt, stability_bound(cur, cfl), target - cur.t)
        halvings = 0
        while True:
            try:
                new = step(cur, h)
            except StepFailure:
                h *= 0.5
                audit["retries"] += 1
                if h < min_dt:
                    raise
                continue
            grow = new.length() - lengths[-1]
            if monotone and grow > length_tol:
                if halvings < 6:
                    h *= 0.5
                    halvings += 1
                    audit["retries"] += 1
                    continue
                audit["length_violations"] += 1
            break
        if abs(new.t - target) <= 1e-12 * max(1.0, abs(target)):
            new = FlowState(target, new.network, new.exterior, new.boundary, new.history, new.steps)
        cur = new
        if resample_every and cur.steps % resample_every == 0:
            cur = resample_state(cur)
        times.append(cur.t)
        lengths.append(cur.length())
        audit["steps"] += 1
        net = cur.network
        audit["max_coincidence"] = max(audit["max_coincidence"], coincidence_residual(net) / max(diam, 1e-300))
        audit["max_herring"] = max(audit["max_herring"], herring_residual(net))
        audit["min_boundary_eigenvalue"] = min(audit["min_boundary_eigenvalue"], _pos_def_min(net))
        if cur.boundary is None:
            for vi, pos in cur.exterior.items():
                if not np.array_equal(np.array(net.vertices[vi].position), pos):
                    audit["exterior_pinned"] = False
        if cur.t >= target:
            snaps.append((cur.t, net))
            mi += 1
        if detect is not None:
            event = detect_transition(cur, eps_edge, kappa_cap)
            if event is not None:
                if snaps[-1][0] != cur.t:
                    snaps.append((cur.t, net))
                break
    else:
        raise SolverFailure("step budget exhausted before t_end", float(cur.t))
    return Trajectory(snaps, times, lengths, cur, audit, event)


def resample_state(state: FlowState) -> FlowState:
    """Redistribute nodes uniformly in arclength; the geometry is unchanged."""
    net = state.network
    curves = tuple(c.resampled(c.n) for c in net.curves)
    new = Network(curves, net.vertices, net.tol)
    return FlowState(state.t, new, state.exterior, state.boundary, state.history, state.steps)


def geometric_distance(a: FlowState | Network, b: FlowState | Network, spacing: float = 1e-3) -> float:
    """Symmetric Hausdorff distance between the point sets of two networks."""
    na = a.network if isinstance(a, FlowState) else a
    nb = b.network if isinstance(b, FlowState) else b
    return hausdorff(_polylines(na), _polylines(nb), spacing)


def _polylines(net: Network) -> list[np.ndarray]:
    return [np.vstack([c.points, c.points[:1]]) if c.closed else c.points for c in net.curves]


# Boundary operator -----------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryOperator:
    """``P = sum_j c_j nu_j nu_j^T`` at a triple junction, with ``c_j = 1/|gamma_x|``."""

    tangents: np.ndarray
    speeds: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray

    @property
    def invertible(self) -> bool:
        return bool(self.eigenvalues[0] > 1e-12 * max(1.0, self.eigenvalues[-1]))


def boundary_operator(tangents, speeds) -> BoundaryOperator:
    """Assemble the junction boundary operator.

    Parameters
    ----------
    tangents : array_like, shape (3, 2)
        Tangent directions of the incident arcs at the junction.
    speeds : array_like, shape (3,)
        Parametrization speeds ``|gamma_x|`` at the junction.
    """
    tau = np.asarray(tangents, dtype=float)
    sp = np.asarray(speeds, dtype=float)
    if tau.shape != (3, 2) or sp.shape != (3,):
        raise PreconditionError("need three tangents and three speeds")
    if np.any(~(sp > 0)):
        raise DegenerateParametrizationError("zero parametrization speed at the junction")
    norms = np.linalg.norm(tau, axis=1)
    if np.any(~(norms > 0)):
        raise DegenerateParametrizationError("zero tangent at the junction")
    nu = left_normal(tau / norms[:, None])
    mat = np.einsum("j,ja,jb->ab", 1.0 / sp, nu, nu)
    mat = 0.5 * (mat + mat.T)
    return BoundaryOperator(tau / norms[:, None], sp, mat, np.linalg.eigvalsh(mat))


def boundary_operator_at(net: Network, vertex: int) -> BoundaryOperator:
    v = net.vertices[vertex]
    if v.valence != 3:
        raise PreconditionError("the boundary operator is defined for triple junctions")
    ders = np.array([net.curves[c].end_derivative(e) for c, e in v.incident])
    sp = np.linalg.norm(ders, axis=1)
    return boundary_operator(ders, sp)


# Startup from irregular data ---------------------------------------------------------


def _smoothstep(q):
    return q * q * (3.0 - 2.0 * q)


def _monotone_tail(rho: np.ndarray, lo: float) -> int:
    """First index of the final run where ``rho`` exceeds ``lo`` and increases."""
    k = len(rho) - 1
    while k > 0 and rho[k - 1] < rho[k] and rho[k - 1] >= lo:
        k -= 1
    return k


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > tol:
            keep.append(i)
    if keep[-1] != len(points) - 1:
        keep[-1] = len(points) - 1
    return points[keep]


@dataclass(frozen=True)
class BlendReport:
    angle: float
    offset: float


def _splice(curve: np.ndarray, soliton: np.ndarray, center: np.ndarray, r: float,
            samples: int = 41) -> tuple[np.ndarray, BlendReport]:
    """Replace the part of ``curve`` inside the ball by ``soliton``, blended over ``[0.6 r, r]``.

    ``curve`` runs outward from the vertex; ``soliton`` runs from its junction
    to the ball boundary.
    """
    lo = 0.6 * r
    rc = np.linalg.norm(curve - center, axis=1)
    out_idx = np.nonzero(rc > r)[0]
    if len(out_idx) == 0:
        raise StartupError("curve does not leave the excision ball; use a smaller radius")
    k = int(out_idx[0])
    if np.any(rc[k:] <= r):
        raise StartupError("curve re-enters the excision ball; use a smaller radius")
    kn = _monotone_tail(rc[: k + 1], lo)
    if kn == 0 or rc[kn - 1] >= lo:
        raise StartupError("curve is not radial across the blend annulus")
    rs = np.linalg.norm(soliton - center, axis=1)
    ks = _monotone_tail(rs, lo)
    if ks == 0 or rs[ks - 1] >= lo:
        raise StartupError("soliton arc is not radial across the blend annulus")
    grid = np.linspace(lo, r, samples)
    S = np.column_stack([np.interp(grid, rs[ks - 1:], soliton[ks - 1:, i]) for i in range(2)])
    sN = max(kn - 1, 0)
    N = np.column_stack([np.interp(grid, rc[sN: k + 1], curve[sN: k + 1, i]) for i in range(2)])
    w = _smoothstep((grid - lo) / (r - lo))[:, None]
    mixed = (1.0 - w) * S + w * N
    dS = np.gradient(S, grid, axis=0)
    dN = np.gradient(N, grid, axis=0)
    cosang = np.sum(dS * dN, axis=1) / (np.linalg.norm(dS, axis=1) * np.linalg.norm(dN, axis=1))
    angle = float(np.max(np.arccos(np.clip(cosang, -1.0, 1.0))))
    offset = float(np.max(np.linalg.norm(S - N, axis=1)) / r)
    pts = np.vstack([soliton[:ks][rs[:ks] < lo], mixed, curve[k:]])
    return _dedupe(pts, 1e-12 * r), BlendReport(angle, offset)


def _expanded_patch(sol: SolitonNetwork, patch: SolitonPatch, net0: Network, fan, t0: float,
                    r: float, J: int) -> SolitonPatch:
    """Replace patch arcs by the order-``J`` corrected curves."""
    from .expansion import build_expansion, curve_jets

    jets = []
    for ci, end in fan.sources:
        pts = net0.curves[ci].points if end == "start" else net0.curves[ci].points[::-1]
        dense = PolyCurve.from_points(pts).resampled(max(400, len(pts)))
        jets.append(curve_jets(dense.points, J + 1, radius=min(r, 0.5 * net0.curves[ci].length())))
    exp = build_expansion(sol, jets, J)
    curves = exp.curves(t0, None, 600)
    new_curves, positions = [], dict(patch.positions)
    for ai, (arc, pts) in enumerate(zip(sol.arcs, curves)):
        if arc.kind != "internal":
            pts = _clip(pts, r)
        start, stop = patch.starts[ai], patch.stops[ai]
        positions[start] = pts[0]
        positions[stop] = pts[-1]
        new_curves.append(PolyCurve.from_points(pts))
    return SolitonPatch(tuple(new_curves), patch.starts, patch.stops, positions, patch.kinds,
                        patch.scale, patch.radius)


@dataclass(frozen=True)
class StartupReport:
    solitons: dict
    blends: dict
    predicted_curves: int


def start_from_irregular(net0: Network, choices: Mapping[int, TopologyDescriptor], t0: float,
                         r: float, J: int = 0, M: int | None = None, origin: float = 0.0,
                         blend_cap: float = 0.25, solitons: Mapping[int, SolitonNetwork] | None = None,
                         R: float = 4.0) -> tuple[FlowState, StartupReport]:
    """Resolve irregular vertices by inserting scaled soliton slices at time ``origin + t0``.

    Inside the ball of radius ``r`` around each chosen vertex the network is
    replaced by ``sqrt(2 t0)`` times the soliton for the chosen topology;
    incoming curves are blended into the soliton arcs with a C^1 Hermite
    weight over the annulus ``[0.6 r, r]``.

    Parameters
    ----------
    choices : mapping
        Vertex index to resolution topology; every key must be irregular.
    J : int
        If positive, the soliton slice carries the order-``J`` correction
        built from the Taylor jets of the incoming curves.
    M : int, optional
        Resample every curve to ``M`` nodes, uniform in arclength.
    blend_cap : float
        Largest allowed tangent mismatch (radians) and relative offset
        between soliton and incoming curve across the annulus.
    solitons : mapping, optional
        Precomputed solitons per vertex.

    Raises
    ------
    StartupError
        The blend exceeds ``blend_cap`` or the geometry does not fit in the
        ball; a smaller ``t0`` usually helps.
    """
    if not t0 > 0 or not r > 0:
        raise PreconditionError("t0 and r must be positive")
    base = origin + t0
    if not choices:
        net = net0 if M is None else _resample_all(net0, M)
        return FlowState.initial(net, base), StartupReport({}, {}, len(net0.curves))
    irregular = set(check_regular(net0).irregular_vertices())
    for vi in choices:
        if vi not in irregular:
            raise PreconditionError(f"vertex {vi} is not an irregular interior vertex")
    pred = predicted_counts(net0, choices)
    fans = dict(zip(net0.interior_vertices(), extract_fans(net0)))
    solitons = dict(solitons or {})
    nodes: dict[object, tuple[str, np.ndarray]] = {}
    pieces: list[Piece] = []
    repl: dict[tuple[int, str], tuple[object, np.ndarray, np.ndarray]] = {}
    for vi, desc in choices.items():
        fan = fans[vi]
        center = np.array(net0.vertices[vi].position)
        sol = solitons.get(vi)
        if sol is None:
            sol = solve_soliton(fan, desc, R)
            solitons[vi] = sol
        try:
            patch = truncate_and_scale(sol, t0, r)
        except ValueError as exc:
            raise StartupError(f"vertex {vi}: {exc}; use a smaller t0 or radius") from exc
        if J > 0:
            patch = _expanded_patch(sol, patch, net0, fan, t0, r, J)
        for lab, pos in patch.positions.items():
            if patch.kinds[lab] != "exterior":
                nodes[("p", vi, lab)] = (patch.kinds[lab], center + pos)
        for curve, a, b in zip(patch.curves, patch.starts, patch.stops):
            if b[0] == "leaf":
                repl[fan.sources[b[1]]] = (("p", vi, a), center + curve.points, center)
            else:
                pieces.append(Piece(("p", vi, a), ("p", vi, b), center + curve.points))
    label_of = {}
    for vi, v in enumerate(net0.vertices):
        if vi in choices:
            continue
        nodes[("v", vi)] = (v.kind, np.array(v.position))
        for key in v.incident:
            label_of[key] = ("v", vi)
    blends = {}
    for ci, c in enumerate(net0.curves):
        pts = c.resampled(max(1000, 4 * c.n)).points.copy()
        pts[0], pts[-1] = c.points[0], c.points[-1]
        a = label_of.get((ci, "start"))
        b = label_of.get((ci, "end"))
        if (ci, "start") in repl:
            a, sol_pts, center = repl[(ci, "start")]
            pts, rep = _splice(pts, sol_pts, center, r)
            blends[(ci, "start")] = rep
        if (ci, "end") in repl:
            b, sol_pts, center = repl[(ci, "end")]
            rev, rep = _splice(pts[::-1], sol_pts, center, r)
            pts = rev[::-1]
            blends[(ci, "end")] = rep
        pieces.append(Piece(a, b, pts))
    for key, rep in blends.items():
        if rep.angle > blend_cap or rep.offset > blend_cap:
            raise StartupError(
                f"blend at curve end {key} misfits (angle {rep.angle:.3f}, offset {rep.offset:.3f}); "
                "use a smaller t0")
    net = assemble(nodes, pieces)
    if len(net.curves) != pred.curves:
        raise NetflowError(f"assembled {len(net.curves)} curves, expected {pred.curves}")
    if M is not None:
        net = _resample_all(net, M)
    return FlowState.initial(net, base), StartupReport(solitons, blends, pred.curves)


def _resample_all(net: Network, M: int) -> Network:
    return Network(tuple(c.resampled(M) for c in net.curves), net.vertices, net.tol)


# Self-similarity -----------------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityReport:
    deviation: float
    times: tuple[float, ...]
    deviations: tuple[float, ...]
    diameter: float
    steps: int


def soliton_slice(sol: SolitonNetwork, t: float, radius: float = 3.0, M: int = 200) -> Network:
    """The network ``sqrt(2 t) eta`` with external arcs cut at rescaled ``radius``."""
    from .expander import patch_network

    lam = math.sqrt(2.0 * t)
    net = patch_network(truncate_and_scale(sol, t, radius * lam))
    return _resample_all(net, M)


def self_similarity_check(sol: SolitonNetwork, t0: float, t1: float, M: int = 200,
                          dt: float = 1e-3, cfl: float = DEFAULT_CFL, radius: float = 3.0,
                          samples: int = 5, spacing: float = 2e-4) -> SimilarityReport:
    """Evolve the exact slice from ``t0`` to ``t1`` and measure drift in rescaled variables.

    Exterior ends move along ``sqrt(2t) eta`` so that the exact solution is
    the soliton itself.  At ``samples`` times (geometrically spaced) the
    computed network is divided by ``sqrt(2t)`` and compared with the slice at
    ``t = 1/2`` by Hausdorff distance.
    """
    start = soliton_slice(sol, t0, radius, M)
    ref = soliton_slice(sol, 0.5, radius, 4 * M)
    lam0 = math.sqrt(2.0 * t0)
    ext0 = {vi: np.array(v.position) for vi, v in enumerate(start.vertices) if v.kind == "exterior"}

    def boundary(t, vi):
        return ext0[vi] * (math.sqrt(2.0 * t) / lam0)

    state = FlowState.initial(start, t0, boundary)
    marks = list(np.geomspace(t0, t1, samples + 1)[1:])
    traj = evolve(state, t1, marks, dt=dt, cfl=cfl)
    times, devs = [], []
    for t, net in traj.snapshots[1:]:
        scaled = net.transformed(scale=1.0 / math.sqrt(2.0 * t))
        times.append(t)
        devs.append(geometric_distance(scaled, ref, spacing))
    return SimilarityReport(max(devs), tuple(times), tuple(devs), ref.diameter(), len(traj.times) - 1)


# Transitions and restart ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransitionEvent:
    """A short internal edge about to vanish with bounded curvature.

    ``limit`` is the network with the short edges contracted; ``vertices`` are
    the new vertices in ``limit`` and ``angles`` the sorted gaps (radians)
    between consecutive incident tangents there.
    """

    time: float
    edges: tuple[int, ...]
    lengths: tuple[float, ...]
    limit: Network
    vertices: tuple[int, ...]
    curvature: float
    angles: tuple[tuple[float, ...], ...]


def _internal_edges(net: Network) -> list[tuple[int, int, int]]:
    where: dict[tuple[int, str], int] = {}
    for vi, v in enumerate(net.vertices):
        for key in v.incident:
            where[key] = vi
    out = []
    for ci, c in enumerate(net.curves):
        if c.closed:
            continue
        a, b = where[(ci, "start")], where[(ci, "end")]
        if net.vertices[a].kind == "interior" and net.vertices[b].kind == "interior" and a != b:
            out.append((ci, a, b))
    return out


def _shift_end(points: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Move ``points[0]`` to ``new``, translating a short initial stretch rigidly.

    The weight is a smoothstep with zero slope at the end, so the end tangent
    keeps its direction.
    """
    shift = new - points[0]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    span = min(10.0 * float(np.linalg.norm(shift)), 0.5 * s[-1])
    w = 1.0 - _smoothstep(np.clip(s / span, 0.0, 1.0)) if span > 0 else (s == 0).astype(float)
    return points + w[:, None] * shift


def contract_edges(net: Network, edges: Iterable[int]) -> tuple[Network, list[int]]:
    """Contract internal edges to points, merging the junctions they join."""
    edges = set(edges)
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    inner = {ci: (a, b) for ci, a, b in _internal_edges(net)}
    for ci in edges:
        a, b = inner[ci]
        parent[find(a)] = find(b)
    clusters: dict[int, list[int]] = {}
    for ci in edges:
        for vi in inner[ci]:
            clusters.setdefault(find(vi), [])
            if vi not in clusters[find(vi)]:
                clusters[find(vi)].append(vi)
    centre = {root: np.mean([net.vertices[v].position for v in vs], axis=0) for root, vs in clusters.items()}
    nodes: dict[object, tuple[str, np.ndarray]] = {}
    label = {}
    for vi, v in enumerate(net.vertices):
        root = find(vi)
        if root in clusters:
            label[vi] = ("c", root)
            nodes[("c", root)] = ("interior", centre[root])
        else:
            label[vi] = ("v", vi)
            nodes[("v", vi)] = (v.kind, np.array(v.position))
    where = {}
    for vi, v in enumerate(net.vertices):
        for key in v.incident:
            where[key] = vi
    pieces = []
    for ci, c in enumerate(net.curves):
        if ci in edges:
            continue
        pts = c.points.copy()
        a, b = where[(ci, "start")], where[(ci, "end")]
        if label[a][0] == "c":
            pts = _shift_end(pts, centre[find(a)])
        if label[b][0] == "c":
            pts = _shift_end(pts[::-1], centre[find(b)])[::-1]
        pieces.append(Piece(label[a], label[b], pts))
    limit = assemble(nodes, pieces)
    order = [n for n, (kind, _) in nodes.items() if kind != "pass"]
    new_vertices = [order.index(("c", root)) for root in clusters]
    return limit, new_vertices


def detect_transition(state: FlowState, eps_edge: float | None = None,
                      kappa_cap: float | None = None) -> TransitionEvent | None:
    """Report internal edges shorter than ``eps_edge`` with curvature below ``kappa_cap``.

    Defaults are three times the current mesh size and ten times the current
    maximal curvature.  ``eps_edge = 0`` never fires.

    Raises
    ------
    UnsupportedSingularityError
        A short edge carries curvature above ``kappa_cap``.
    """
    net = state.network
    eps = 3.0 * mesh_size(net) if eps_edge is None else eps_edge
    cap = 10.0 * max_curvature(net) if kappa_cap is None else kappa_cap
    if not eps > 0:
        return None
    short = [(ci, net.curves[ci].length()) for ci, _, _ in _internal_edges(net)]
    short = [(ci, L) for ci, L in short if L < eps]
    if not short:
        return None
    kappa = max(float(np.max(np.abs(curvature(net.curves[ci].points)))) for ci, _ in short)
    if kappa > cap:
        raise UnsupportedSingularityError(
            "edge is vanishing with unbounded curvature",
            {"time": state.t, "edges": [ci for ci, _ in short], "lengths": [L for _, L in short],
             "curvature": kappa, "cap": cap})
    edges = tuple(ci for ci, _ in short)
    limit, verts = contract_edges(net, edges)
    angles = []
    for vi in verts:
        v = limit.vertices[vi]
        dirs = np.array([limit.curves[c].end_tangent(e) for c, e in v.incident])
        ang = np.sort(np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * math.pi))
        gaps = np.diff(np.append(ang, ang[0] + 2 * math.pi))
        angles.append(tuple(float(g) for g in gaps))
    return TransitionEvent(state.t, edges, tuple(L for _, L in short), limit, tuple(verts), kappa,
                           tuple(angles))


def restart(state: FlowState, event: TransitionEvent,
            choice: TopologyDescriptor | Mapping[int, TopologyDescriptor], t0: float, r: float,
            M: int | None = None, **kw) -> FlowState:
    """Continue the flow through a transition by resolving the contracted vertices.

    All new vertices of the event are resolved at the same time
    ``event.time + t0``.  A single descriptor applies to every new vertex.
    New vertices that are already regular are kept as they are.
    """
    if isinstance(choice, TopologyDescriptor):
        choices = {vi: choice for vi in event.vertices}
    else:
        choices = dict(choice)
    irregular = set(check_regular(event.limit).irregular_vertices())
    choices = {vi: d for vi, d in choices.items() if vi in irregular}
    if M is None:
        M = max(c.n for c in state.network.curves)
    new, _ = start_from_irregular(event.limit, choices, t0, r, M=M, origin=event.time, **kw)
    return FlowState(new.t, new.network, new.exterior, state.boundary, new.history, 0)


# Fixtures ------------------------------------------------------------------------------


def _bezier(p0, p1, p2, p3, n):
    u = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - u) ** 3) * p0 + 3 * ((1 - u) ** 2) * u * p1 + 3 * (1 - u) * u**2 * p2 + u**3 * p3


def bowtie(c0: float = 0.15, width: float = 0.5, height: float = 1.0, M: int = 64,
           M_edge: int | None = None) -> Network:
    """Two triple junctions at ``(+-c0, 0)`` joined by a horizontal edge.

    Each junction connects to the two exterior points on its side,
    ``(+-width, +-height)``, by cubic arcs leaving at the Herring angles.  For
    a tall box the horizontal edge shrinks to a point in finite time.  The
    edge gets ``M_edge`` nodes (default ``M``), the arms ``M``.
    """
    ext = {
        "ur": np.array([width, height]), "lr": np.array([width, -height]),
        "ul": np.array([-width, height]), "ll": np.array([-width, -height]),
    }
    jr, jl = np.array([c0, 0.0]), np.array([-c0, 0.0])
    curves, verts_inc = [], {"jl": [], "jr": [], "ul": [], "ll": [], "ur": [], "lr": []}
    curves.append(np.linspace(jl, jr, M))
    verts_inc["jl"].append((0, "start"))
    verts_inc["jr"].append((0, "end"))
    arms = [("jr", jr, "ur", 60.0), ("jr", jr, "lr", -60.0), ("jl", jl, "ul", 120.0), ("jl", jl, "ll", 240.0)]
    for jname, jpos, ename, deg in arms:
        d = np.array([math.cos(math.radians(deg)), math.sin(math.radians(deg))])
        e = ext[ename]
        span = float(np.linalg.norm(e - jpos))
        p1 = jpos + 0.4 * span * d
        p2 = e + 0.3 * span * np.array([0.0, -np.sign(e[1])])
        ci = len(curves)
        curves.append(_bezier(jpos, p1, p2, e, M))
        verts_inc[jname].append((ci, "start"))
        verts_inc[ename].append((ci, "end"))
    pos = {"jl": jl, "jr": jr, **ext}
    verts = tuple(
        Vertex("interior" if n.startswith("j") else "exterior", tuple(pos[n]), tuple(inc))
        for n, inc in verts_inc.items()
    )
    pcs = tuple(PolyCurve.from_points(p) for p in curves)
    sizes = [M if M_edge is None else M_edge] + [M] * 4
    return Network(tuple(c.resampled(n) for c, n in zip(pcs, sizes)), verts)


def straight_network(center, ends: Sequence[Sequence[float]], M: int = 64) -> Network:
    """Straight arms from ``center`` to each exterior point, uniformly sampled."""
    c = np.asarray(center, dtype=float)
    curves, verts = [], [Vertex("interior", tuple(c), tuple((i, "start") for i in range(len(ends))))]
    for i, e in enumerate(ends):
        e = np.asarray(e, dtype=float)
        curves.append(PolyCurve.from_points(np.linspace(c, e, M)))
        verts.append(Vertex("exterior", tuple(e), ((i, "end"),)))
    return Network(tuple(curves), tuple(verts))


def circle(radius: float = 1.0, M: int = 256) -> Network:
    th = 2 * math.pi * np.arange(M) / M
    pts = radius * np.column_stack([np.cos(th), np.sin(th)])
    return Network((PolyCurve(np.linspace(0.0, 1.0, M), pts, True),), ())
