"""Finite-difference weights on arbitrary grids."""

from __future__ import annotations

import numpy as np


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights for derivatives 0..m at ``z`` from samples at nodes ``x``.

    Returns an array of shape ``(m + 1, len(x))``; row ``k`` holds the
    weights of the ``k``-th derivative.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative(x: np.ndarray, f: np.ndarray, order: int = 1, width: int = 9) -> np.ndarray:
    """Derivative of sampled ``f`` along axis 0 using ``width``-point stencils.

    Stencils are centred in the interior and shift to one side near the ends,
    so every node gets the same formal accuracy ``width - order``.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    n = len(x)
    width = min(width, n)
    if width <= order:
        raise ValueError("need more samples than the derivative order")
    half = width // 2
    out = np.empty_like(f)
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        w = fornberg_weights(x[i], x[lo:lo + width], order)[order]
        out[i] = np.tensordot(w, f[lo:lo + width], axes=(0, 0))
    return out
