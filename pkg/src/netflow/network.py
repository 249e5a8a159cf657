"""Discrete planar networks: curves, vertices, regularity and fans.

Curves are sampled parametrized arcs on a parameter grid in ``[0, 1]``.
Vertices record which curve ends meet there.  Everything here is plain
immutable data plus pure functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import InvalidCurveError, InvalidNetworkError

End = Literal["start", "end"]
TWO_PI_3 = 2.0 * math.pi / 3.0


def _as_points(points: np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidCurveError("points must have shape (n, 2)")
    if not np.all(np.isfinite(arr)):
        raise InvalidCurveError("points must be finite")
    arr.setflags(write=False)
    return arr


def chord_params(points: np.ndarray) -> np.ndarray:
    """Normalized cumulative chord length, a parameter grid on ``[0, 1]``."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum / cum[-1]


@dataclass(frozen=True, eq=False)
class PolyCurve:
    """A sampled parametrized arc ``x_i -> gamma(x_i)``.

    Parameters
    ----------
    params : array_like
        Strictly increasing grid with ``params[0] == 0`` and ``params[-1] == 1``.
    points : array_like, shape (n, 2)
        Samples of the curve at ``params``.
    closed : bool
        If true the curve is a loop; the last sample must not repeat the first.
    """

    params: np.ndarray
    points: np.ndarray
    closed: bool = False

    def __post_init__(self) -> None:
        pts = _as_points(self.points)
        par = np.array(self.params, dtype=float)
        if par.ndim != 1 or len(par) != len(pts):
            raise InvalidCurveError("params and points must have matching length")
        if len(pts) < 3:
            raise InvalidCurveError("a curve needs at least three samples")
        if not np.all(np.isfinite(par)) or np.any(np.diff(par) <= 0):
            raise InvalidCurveError("params must be finite and strictly increasing")
        if abs(par[0]) > 1e-12 or abs(par[-1] - 1.0) > 1e-12:
            raise InvalidCurveError("params must run from 0 to 1")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if self.closed:
            seg = np.append(seg, np.linalg.norm(pts[0] - pts[-1]))
        if np.any(seg <= 0.0):
            raise InvalidCurveError("consecutive samples must be distinct")
        par.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "params", par)

    @classmethod
    def from_points(cls, points, closed: bool = False) -> "PolyCurve":
        """Build a curve with a uniform parameter grid."""
        pts = np.asarray(points, dtype=float)
        return cls(np.linspace(0.0, 1.0, len(pts)), pts, closed)

    @property
    def n(self) -> int:
        return len(self.points)

    def endpoint(self, end: End) -> np.ndarray:
        return self.points[0] if end == "start" else self.points[-1]

    def length(self) -> float:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        total = float(seg.sum())
        if self.closed:
            total += float(np.linalg.norm(self.points[0] - self.points[-1]))
        return total

    def end_derivative(self, end: End) -> np.ndarray:
        """Second-order one-sided derivative of gamma in the parameter at an end.

        The returned vector points into the curve, i.e. away from the end.
        """
        if end == "start":
            x, p = self.params[:3], self.points[:3]
        else:
            x, p = self.params[-1:-4:-1], self.points[-1:-4:-1]
        h1, h2 = x[1] - x[0], x[2] - x[0]
        w1 = h2 / (h1 * (h2 - h1))
        w2 = -h1 / (h2 * (h2 - h1))
        d = w1 * (p[1] - p[0]) + w2 * (p[2] - p[0])
        return d if end == "start" else -d

    def end_tangent(self, end: End) -> np.ndarray:
        """Unit tangent at an end, pointing into the curve."""
        d = self.end_derivative(end)
        nrm = float(np.linalg.norm(d))
        if not nrm > 0.0:
            raise InvalidCurveError(f"degenerate tangent at the {end} of a curve")
        return d / nrm

    def reversed(self) -> "PolyCurve":
        return PolyCurve(1.0 - self.params[::-1], self.points[::-1].copy(), self.closed)

    def transformed(self, rotation: float = 0.0, shift=(0.0, 0.0), scale: float = 1.0) -> "PolyCurve":
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        pts = scale * self.points @ rot.T + np.asarray(shift, dtype=float)
        return PolyCurve(self.params.copy(), pts, self.closed)

    def resampled(self, n: int) -> "PolyCurve":
        """Resample to ``n`` nodes uniform in arclength with a cubic spline."""
        from scipy.interpolate import CubicSpline

        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        u = chord_params(pts)
        spline = CubicSpline(u, pts, bc_type="periodic" if self.closed else "not-a-knot")
        dense = spline(np.linspace(0.0, 1.0, 8 * max(n, len(pts)) + 1))
        ud = chord_params(dense)
        target = np.linspace(0.0, 1.0, n + 1 if self.closed else n)
        new = spline(np.interp(target, ud, np.linspace(0.0, 1.0, len(dense))))
        if self.closed:
            new = new[:-1]
            return PolyCurve(np.linspace(0.0, 1.0, n), new, True)
        new[0], new[-1] = self.points[0], self.points[-1]
        return PolyCurve(np.linspace(0.0, 1.0, n), new, False)


@dataclass(frozen=True)
class Vertex:
    """A network vertex and the curve ends incident to it."""

    kind: Literal["interior", "exterior"]
    position: tuple[float, float]
    incident: tuple[tuple[int, End], ...]

    def __post_init__(self) -> None:
        if self.kind not in ("interior", "exterior"):
            raise InvalidNetworkError(f"unknown vertex kind {self.kind!r}")
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 2 or not all(math.isfinite(v) for v in pos):
            raise InvalidNetworkError("vertex position must be two finite numbers")
        inc = tuple((int(c), e) for c, e in self.incident)
        for _, e in inc:
            if e not in ("start", "end"):
                raise InvalidNetworkError(f"bad curve end {e!r}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "incident", inc)

    @property
    def valence(self) -> int:
        return len(self.incident)


@dataclass(frozen=True, eq=False)
class Network:
    """Curves plus vertices with two-way consistent incidence."""

    curves: tuple[PolyCurve, ...]
    vertices: tuple[Vertex, ...]
    tol: float | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "vertices", tuple(self.vertices))
        self.validate()

    def diameter(self) -> float:
        pts = np.vstack([c.points for c in self.curves]) if self.curves else np.zeros((1, 2))
        span = pts.max(axis=0) - pts.min(axis=0)
        return float(np.hypot(*span))

    def coincidence_tol(self) -> float:
        return self.tol if self.tol is not None else 1e-9 * max(self.diameter(), 1e-300)

    def validate(self, check_embedded: bool = False) -> None:
        tol = self.coincidence_tol()
        seen: dict[tuple[int, str], int] = {}
        for vi, v in enumerate(self.vertices):
            if v.kind == "interior" and v.valence < 3:
                raise InvalidNetworkError(f"interior vertex {vi} has valence {v.valence} < 3")
            if v.kind == "exterior" and v.valence != 1:
                raise InvalidNetworkError(f"exterior vertex {vi} must have exactly one curve end")
            for ci, end in v.incident:
                if not 0 <= ci < len(self.curves):
                    raise InvalidNetworkError(f"vertex {vi} references missing curve {ci}")
                if self.curves[ci].closed:
                    raise InvalidNetworkError(f"closed curve {ci} cannot meet a vertex")
                key = (ci, end)
                if key in seen:
                    raise InvalidNetworkError(f"curve end {key} attached to two vertices")
                seen[key] = vi
                gap = np.linalg.norm(self.curves[ci].endpoint(end) - np.array(v.position))
                if gap > tol:
                    raise InvalidNetworkError(
                        f"curve {ci} {end} misses vertex {vi} by {gap:.3e}"
                    )
        for ci, c in enumerate(self.curves):
            if c.closed:
                continue
            for end in ("start", "end"):
                if (ci, end) not in seen:
                    raise InvalidNetworkError(f"curve {ci} {end} is not attached to a vertex")
        for vi, v in enumerate(self.vertices):
            if v.kind != "interior":
                continue
            dirs = np.array([self.curves[c].end_tangent(e) for c, e in v.incident])
            ang = np.sort(np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * math.pi))
            gaps = np.diff(np.append(ang, ang[0] + 2 * math.pi))
            if np.any(gaps < 1e-9):
                raise InvalidNetworkError(f"tangential curve ends at vertex {vi}")
        if check_embedded:
            hit = first_crossing(self)
            if hit is not None:
                raise InvalidNetworkError(f"curves {hit[0]} and {hit[1]} intersect")

    def transformed(self, rotation: float = 0.0, shift=(0.0, 0.0), scale: float = 1.0) -> "Network":
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        verts = [
            Vertex(v.kind, tuple(scale * rot @ np.array(v.position) + np.asarray(shift)), v.incident)
            for v in self.vertices
        ]
        curves = [cv.transformed(rotation, shift, scale) for cv in self.curves]
        return Network(tuple(curves), tuple(verts), self.tol)

    def with_curve_reversed(self, index: int) -> "Network":
        """Same network with one curve's orientation flipped."""
        curves = list(self.curves)
        curves[index] = curves[index].reversed()
        flip = {"start": "end", "end": "start"}
        verts = [
            Vertex(v.kind, v.position, tuple((c, flip[e]) if c == index else (c, e) for c, e in v.incident))
            for v in self.vertices
        ]
        return Network(tuple(curves), tuple(verts), self.tol)

    def interior_vertices(self) -> list[int]:
        return [i for i, v in enumerate(self.vertices) if v.kind == "interior"]

    def total_length(self) -> float:
        return float(sum(c.length() for c in self.curves))


def _segments(curve: PolyCurve) -> np.ndarray:
    pts = curve.points
    if curve.closed:
        pts = np.vstack([pts, pts[:1]])
    return np.stack([pts[:-1], pts[1:]], axis=1)


def _proper_crossings(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean matrix of strict crossings between segment arrays."""

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    p1, p2 = a[:, None, 0], a[:, None, 1]
    q1, q2 = b[None, :, 0], b[None, :, 1]
    d1 = orient(p1, p2, q1)
    d2 = orient(p1, p2, q2)
    d3 = orient(q1, q2, p1)
    d4 = orient(q1, q2, p2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def first_crossing(net: Network) -> tuple[int, int] | None:
    """First pair of curves whose interiors cross, by an O(M^2) segment sweep."""
    segs = [_segments(c) for c in net.curves]
    for i in range(len(segs)):
        hits = _proper_crossings(segs[i], segs[i])
        hits &= np.abs(np.subtract.outer(np.arange(len(segs[i])), np.arange(len(segs[i])))) > 1
        if hits.any():
            return (i, i)
        for j in range(i + 1, len(segs)):
            if _proper_crossings(segs[i], segs[j]).any():
                return (i, j)
    return None


@dataclass(frozen=True)
class VertexRegularity:
    vertex: int
    regular: bool
    valence: int
    tangent_sum_norm: float
    angle_defects: tuple[float, ...]

    @property
    def max_deviation(self) -> float:
        return max((abs(a) for a in self.angle_defects), default=0.0)


@dataclass(frozen=True)
class RegularityReport:
    vertices: tuple[VertexRegularity, ...]

    @property
    def regular(self) -> bool:
        return all(v.regular for v in self.vertices)

    def irregular_vertices(self) -> list[int]:
        return [v.vertex for v in self.vertices if not v.regular]


def _sorted_directions(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ang = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * math.pi)
    order = np.argsort(ang, kind="stable")
    return order, ang[order]


def check_regular(net: Network, tol: float = 1e-9) -> RegularityReport:
    """Classify every interior vertex as regular (Herring) or irregular.

    A vertex is regular when it has valence three and its unit tangents sum
    to a vector of norm at most ``tol``.  Angle defects are the gaps between
    consecutive tangent directions minus ``2 pi / 3``.
    """
    out = []
    for vi in net.interior_vertices():
        v = net.vertices[vi]
        dirs = np.array([net.curves[c].end_tangent(e) for c, e in v.incident])
        _, ang = _sorted_directions(dirs)
        gaps = np.diff(np.append(ang, ang[0] + 2 * math.pi))
        norm = float(np.linalg.norm(dirs.sum(axis=0)))
        regular = v.valence == 3 and norm <= tol
        out.append(VertexRegularity(vi, regular, v.valence, norm, tuple(float(g - TWO_PI_3) for g in gaps)))
    return RegularityReport(tuple(out))


@dataclass(frozen=True, eq=False)
class Fan:
    """Cyclically ordered unit rays at a point.

    ``sources`` optionally records which curve end produced each ray.
    """

    center: np.ndarray
    directions: np.ndarray
    sources: tuple[tuple[int, End], ...] | None = None

    def __post_init__(self) -> None:
        d = np.array(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[1] != 2 or len(d) < 2:
            raise InvalidNetworkError("fan needs at least two directions")
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "center", np.array(self.center, dtype=float))

    @classmethod
    def from_angles(cls, angles: Iterable[float], center=(0.0, 0.0)) -> "Fan":
        a = np.asarray(list(angles), dtype=float)
        return cls(np.asarray(center, dtype=float), np.column_stack([np.cos(a), np.sin(a)]))

    @property
    def k(self) -> int:
        return len(self.directions)

    @property
    def angles(self) -> np.ndarray:
        return np.arctan2(self.directions[:, 1], self.directions[:, 0])

    def rotated(self, phi: float) -> "Fan":
        c, s = math.cos(phi), math.sin(phi)
        rot = np.array([[c, -s], [s, c]])
        return Fan(rot @ self.center, self.directions @ rot.T, self.sources)


def extract_fans(net: Network) -> list[Fan]:
    """One fan per interior vertex, rays sorted counterclockwise."""
    fans = []
    for vi in net.interior_vertices():
        v = net.vertices[vi]
        dirs = np.array([net.curves[c].end_tangent(e) for c, e in v.incident])
        order, _ = _sorted_directions(dirs)
        fans.append(Fan(np.array(v.position), dirs[order], tuple(v.incident[i] for i in order)))
    return fans


def _reject_nonfinite(token: str):
    raise ValueError(f"non-finite number {token!r} in network file")


def network_to_dict(net: Network) -> dict:
    return {
        "curves": [
            {"params": c.params.tolist(), "points": c.points.tolist(), "closed": bool(c.closed)}
            for c in net.curves
        ],
        "vertices": [
            {"kind": v.kind, "position": list(v.position), "incident": [[c, e] for c, e in v.incident]}
            for v in net.vertices
        ],
    }


def network_from_dict(doc: dict) -> Network:
    try:
        curves = tuple(
            PolyCurve(
                np.asarray(c.get("params", np.linspace(0, 1, len(c["points"]))), dtype=float),
                np.asarray(c["points"], dtype=float),
                bool(c.get("closed", False)),
            )
            for c in doc["curves"]
        )
        verts = tuple(
            Vertex(v["kind"], tuple(v["position"]), tuple((int(c), e) for c, e in v["incident"]))
            for v in doc["vertices"]
        )
    except (KeyError, TypeError) as exc:
        raise InvalidNetworkError(f"malformed network document: {exc}") from exc
    return Network(curves, verts)


def load_network(path: str | Path) -> Network:
    """Parse a network JSON file, rejecting NaN and infinities."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text, parse_constant=_reject_nonfinite)
    except ValueError as exc:
        raise InvalidNetworkError(str(exc)) from exc
    return network_from_dict(doc)


def dump_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1), encoding="utf-8")
