"""Independent brute-force oracles shared by the unit and acceptance tests."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations


# brute-force resolution counts ----------------------------------------------------


def _crosses(d1, d2):
    a, b = sorted(d1)
    c, d = sorted(d2)
    return (a < c < b < d) or (c < a < d < b)


def polygon_triangulations(n):
    """Count maximal sets of pairwise non-crossing diagonals of an n-gon."""
    if n <= 3:
        return 1
    diags = [(i, j) for i in range(n) for j in range(i + 2, n) if not (i == 0 and j == n - 1)]
    return sum(
        1
        for combo in combinations(diags, n - 3)
        if all(not _crosses(p, q) for p, q in combinations(combo, 2))
    )


def brute_count(k, disconnected):
    """Trees on b cyclic leaves are dual to triangulations of a b-gon."""
    if not disconnected:
        return polygon_triangulations(k)
    total = polygon_triangulations(k)
    # choose cut positions among the k gaps; at least two cuts give >= 2 blocks
    for ncut in range(2, k + 1):
        for cuts in combinations(range(k), ncut):
            sizes = [(cuts[(i + 1) % ncut] - cuts[i]) % k for i in range(ncut)]
            if min(sizes) < 2:
                continue
            prod = 1
            for b in sizes:
                prod *= polygon_triangulations(b) if b >= 3 else 1
            total += prod
    return total


# brute-force series oracle ------------------------------------------------------


def _pmul(p, q):
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, x in enumerate(p):
        for k, y in enumerate(q):
            out[i + k] += x * y
    return out


def _padd(p, q):
    n = max(len(p), len(q))
    return [(p[i] if i < len(p) else 0) + (q[i] if i < len(q) else 0) for i in range(n)]


def _pder(p):
    return [k * p[k] for k in range(1, len(p))] or [Fraction(0)]


def _strip(p):
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def brute_force_Q(j, jets):
    """Order-j coefficient of (1/|eta'|^2) eta'' with eta_j = 0, by direct series products."""
    d1 = [tuple(_pder(c) for c in e) for e in jets[:j]] + [([Fraction(0)], [Fraction(0)])]
    d2 = [tuple(_pder(c) for c in e) for e in d1]
    w = []
    for l in range(j + 1):
        acc = [Fraction(0)]
        for i in range(l + 1):
            for c in range(2):
                acc = _padd(acc, _pmul(d1[i][c], d1[l - i][c]))
        w.append(acc)
    w0 = _strip(w[0])
    assert len(w0) == 1
    r = [[1 / w0[0]]]
    for l in range(1, j + 1):
        acc = [Fraction(0)]
        for k in range(1, l + 1):
            acc = _padd(acc, _pmul(w[k], r[l - k]))
        r.append([-x / w0[0] for x in acc])
    out = []
    for c in range(2):
        acc = [Fraction(0)]
        for k in range(j + 1):
            acc = _padd(acc, _pmul(r[k], d2[j - k][c]))
        out.append(_strip(acc))
    return tuple(out)
