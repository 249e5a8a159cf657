"""Small geometric helpers shared by several modules."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree


def rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)


def left_normal(v: np.ndarray) -> np.ndarray:
    """Rotate vectors by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def densify(points: np.ndarray, spacing: float, closed: bool = False) -> np.ndarray:
    """Insert points along a polyline so no gap exceeds ``spacing``."""
    pts = np.asarray(points, dtype=float)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def hausdorff(a: Iterable[np.ndarray], b: Iterable[np.ndarray], spacing: float = 1e-3) -> float:
    """Symmetric Hausdorff distance between two unions of polylines."""
    pa = np.vstack([densify(p, spacing) for p in a])
    pb = np.vstack([densify(p, spacing) for p in b])
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(max(da.max(), db.max()))
