"""Resolution topologies for irregular vertices and curve-count bookkeeping.

A resolution of a ``k``-ray fan splits the rays into cyclically contiguous
blocks.  A block of two rays becomes a single arc joining them; a block of
``b >= 3`` rays becomes a planar trivalent tree with those rays as leaves.
Leaves are numbered ``0 .. k-1`` internally and ``1 .. k`` in strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidNetworkError, PreconditionError, UnsupportedValenceError
from .network import Fan, Network, PolyCurve, Vertex, chord_params, extract_fans

Cluster = frozenset


@dataclass(frozen=True)
class Block:
    """A contiguous run of leaves plus the interior edges of its tree.

    Each interior edge is stored as the cluster of leaves on the side that
    does not contain ``leaves[0]``.
    """

    leaves: tuple[int, ...]
    splits: frozenset[Cluster] = frozenset()

    @property
    def size(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class TreeEdge:
    a: object
    b: object
    interior: bool


@dataclass(frozen=True)
class BlockTree:
    """Explicit tree of one block: junction ids are leaf clusters."""

    junctions: tuple[Cluster, ...]
    edges: tuple[TreeEdge, ...]


@dataclass(frozen=True)
class TopologyDescriptor:
    """Contiguous block decomposition of ``k`` cyclic leaves with block trees."""

    k: int
    blocks: tuple[Block, ...]

    def __post_init__(self) -> None:
        seen = sorted(l for b in self.blocks for l in b.leaves)
        if seen != list(range(self.k)):
            raise PreconditionError("blocks must partition the leaves")
        for b in self.blocks:
            if b.size < 2:
                raise PreconditionError("every block needs at least two leaves")
            if any((b.leaves[i + 1] - b.leaves[i]) % self.k != 1 for i in range(b.size - 1)):
                raise PreconditionError(f"block {b.leaves} is not cyclically contiguous")
            if b.size >= 3 and len(b.splits) != b.size - 3:
                raise PreconditionError(f"block {b.leaves} needs {b.size - 3} interior edges")
            if b.size >= 3:
                block_tree(b)

    @property
    def connected(self) -> bool:
        return len(self.blocks) == 1

    def __str__(self) -> str:
        return format_descriptor(self)


def block_tree(block: Block) -> BlockTree:
    """Build the explicit tree of a block from its interior edges."""
    leaves = block.leaves
    if block.size == 2:
        return BlockTree((), (TreeEdge(leaves[0], leaves[1], False),))
    rest = frozenset(leaves[1:])
    clusters = set(block.splits) | {rest}
    for c in block.splits:
        if not c < rest or len(c) < 2:
            raise PreconditionError(f"invalid interior edge {sorted(c)}")
    pos = {l: i for i, l in enumerate(leaves)}
    for c in clusters:
        idx = sorted(pos[l] for l in c)
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise PreconditionError(f"interior edge {sorted(c)} is not contiguous")
    for c1, c2 in combinations(clusters, 2):
        if c1 & c2 and not (c1 <= c2 or c2 <= c1):
            raise PreconditionError("interior edges cross")

    def parent(node: Cluster) -> Cluster:
        return min((c for c in clusters if node < c), key=len)

    edges = [TreeEdge(leaves[0], rest, False)]
    children: dict[Cluster, int] = {c: 0 for c in clusters}
    for l in leaves[1:]:
        p = parent(frozenset([l]))
        children[p] += 1
        edges.append(TreeEdge(l, p, False))
    for c in block.splits:
        p = parent(c)
        children[p] += 1
        edges.append(TreeEdge(c, p, True))
    if any(n != 2 for n in children.values()):
        raise PreconditionError("interior edges do not form a binary tree")
    junctions = tuple(sorted(clusters, key=lambda c: (-len(c), sorted(pos[l] for l in c))))
    return BlockTree(junctions, tuple(edges))


def _rooted_trees(run: tuple[int, ...]) -> list[frozenset[Cluster]]:
    """All rooted planar binary trees on ``run``; returns their cluster sets."""
    if len(run) == 1:
        return [frozenset()]
    out = []
    for cut in range(1, len(run)):
        left, right = run[:cut], run[cut:]
        for a in _rooted_trees(left):
            for b in _rooted_trees(right):
                own = set(a) | set(b)
                if len(left) >= 2:
                    own.add(frozenset(left))
                if len(right) >= 2:
                    own.add(frozenset(right))
                out.append(frozenset(own))
    return out


def block_trees(leaves: tuple[int, ...]) -> list[Block]:
    """Every planar trivalent tree on a run of leaves."""
    if len(leaves) == 2:
        return [Block(leaves)]
    return [Block(leaves, s) for s in _rooted_trees(leaves[1:])]


def contiguous_decompositions(k: int) -> list[tuple[tuple[int, ...], ...]]:
    """Partitions of ``0..k-1`` into cyclically contiguous runs of size >= 2."""
    out = [tuple([tuple(range(k))])]
    seen = set()
    for start in range(k):
        def rec(pos: int, remaining: int, acc: list[tuple[int, ...]]):
            if remaining == 0:
                key = frozenset(acc)
                if len(acc) >= 2 and key not in seen:
                    seen.add(key)
                    out.append(tuple(acc))
                return
            for size in range(2, remaining + 1):
                run = tuple((pos + i) % k for i in range(size))
                rec((pos + size) % k, remaining - size, acc + [run])

        rec(start, k, [])
    return out


def enumerate_resolutions(fan: Fan | int, allow_disconnected: bool = False) -> list[TopologyDescriptor]:
    """All resolution topologies of a fan (or of ``k`` cyclic leaves).

    Without ``allow_disconnected`` only the single full block is used, which
    gives the planar binary trees on ``k`` cyclic leaves.
    """
    k = fan if isinstance(fan, int) else fan.k
    if k < 3:
        raise UnsupportedValenceError(f"resolution needs valence >= 3, got {k}")
    decomps = contiguous_decompositions(k) if allow_disconnected else [(tuple(range(k)),)]
    out = []
    for dec in decomps:
        options = [block_trees(run) for run in dec]
        for choice in _product(options):
            out.append(TopologyDescriptor(k, tuple(choice)))
    return out


def _product(options: list[list[Block]]) -> Iterable[list[Block]]:
    if not options:
        yield []
        return
    for head in options[0]:
        for tail in _product(options[1:]):
            yield [head] + tail


def _label(leaves: Iterable[int]) -> str:
    return "".join(str(l + 1) if l < 9 else f"({l + 1})" for l in leaves)


def _format_block(block: Block) -> str:
    if block.size <= 3:
        return _label(block.leaves)
    pos = {l: i for i, l in enumerate(block.leaves)}
    parts = []
    for c in sorted(block.splits, key=lambda c: (min(pos[l] for l in c), len(c))):
        inside = sorted(c, key=pos.get)
        outside = [l for l in block.leaves if l not in c]
        i0 = block.leaves.index(inside[0])
        j = (i0 + len(inside)) % block.size
        outside = [block.leaves[(j + t) % block.size] for t in range(len(outside))]
        sides = sorted([inside, outside], key=lambda side: side[0])
        parts.append(f"{_label(sides[0])}|{_label(sides[1])}")
    return ",".join(parts)


def format_descriptor(desc: TopologyDescriptor) -> str:
    """String form, e.g. ``12|34``, ``123`` or ``{12}{34}``."""
    if desc.connected:
        return _format_block(desc.blocks[0])
    return "".join("{" + _format_block(b) + "}" for b in desc.blocks)


def _parse_labels(text: str) -> list[int]:
    out, i = [], 0
    while i < len(text):
        if text[i] == "(":
            j = text.index(")", i)
            out.append(int(text[i + 1:j]) - 1)
            i = j + 1
        else:
            out.append(int(text[i]) - 1)
            i += 1
    return out


def _parse_block(text: str, k: int) -> Block:
    if "|" not in text:
        leaves = _parse_labels(text)
        if len(leaves) > 3:
            raise PreconditionError(f"block {text!r} needs its interior edges spelled out")
        return Block(_cyclic_run(leaves, k))
    groups = []
    for part in text.split(","):
        left, right = part.split("|")
        groups.append((_parse_labels(left), _parse_labels(right)))
    all_leaves = set(groups[0][0]) | set(groups[0][1])
    leaves = _cyclic_run(sorted(all_leaves), k)
    splits = set()
    for left, right in groups:
        if set(left) | set(right) != all_leaves:
            raise PreconditionError(f"split {left}|{right} does not cover the block")
        side = right if leaves[0] in left else left
        splits.add(frozenset(side))
    return Block(leaves, frozenset(splits))


def _cyclic_run(leaves: Iterable[int], k: int) -> tuple[int, ...]:
    """Order a set of leaves as a cyclic run ``l0, l0+1, ...`` mod ``k``."""
    s = set(leaves)
    if len(s) == k:
        return tuple(range(k))
    for start in s:
        if (start - 1) % k not in s:
            run = tuple((start + i) % k for i in range(len(s)))
            if set(run) == s:
                return run
    raise PreconditionError(f"leaves {sorted(s)} are not cyclically contiguous")


def parse_descriptor(text: str, k: int) -> TopologyDescriptor:
    """Inverse of :func:`format_descriptor`."""
    text = text.strip()
    if text.startswith("{"):
        parts = [p for p in text.replace("}", "").split("{") if p]
        blocks = [_parse_block(p, k) for p in parts]
    else:
        blocks = [_parse_block(text, k)]
    blocks.sort(key=lambda b: b.leaves[0])
    return TopologyDescriptor(k, tuple(blocks))


@dataclass(frozen=True)
class VertexCounts:
    interior_vertices: int
    edges: int
    interior_edges: int


@dataclass(frozen=True)
class PredictedCounts:
    curves: int
    per_vertex: Mapping[int, VertexCounts]


def block_counts(block: Block) -> VertexCounts:
    if block.size == 2:
        return VertexCounts(0, 1, 0)
    b = block.size
    return VertexCounts(b - 2, 2 * b - 3, b - 3)


def predicted_counts(net: Network, choices: Mapping[int, TopologyDescriptor]) -> PredictedCounts:
    """Curve count after resolving the chosen vertices.

    Tree choices follow ``m = n + sum(k_i - 3)`` with ``k - 2`` junctions and
    ``2k - 3`` edges per vertex; other choices are summed block by block,
    where a two-leaf block merges two curves into one.
    """
    per_vertex = {}
    m = len(net.curves)
    for vi, desc in choices.items():
        k = net.vertices[vi].valence
        if desc.k != k:
            raise PreconditionError(f"vertex {vi} has valence {k} but choice has k={desc.k}")
        if desc.connected:
            per_vertex[vi] = VertexCounts(k - 2, 2 * k - 3, k - 3)
            m += k - 3
        else:
            parts = [block_counts(b) for b in desc.blocks]
            per_vertex[vi] = VertexCounts(
                sum(p.interior_vertices for p in parts),
                sum(p.edges for p in parts),
                sum(p.interior_edges for p in parts),
            )
            m += sum(b.size - 3 for b in desc.blocks)
    return PredictedCounts(m, per_vertex)


# Assembly of networks from pieces -------------------------------------------------


@dataclass
class Piece:
    """A polyline between two labelled nodes, used while rebuilding networks."""

    a: object
    b: object
    points: np.ndarray


def assemble(nodes: Mapping[object, tuple[str, np.ndarray]], pieces: list[Piece],
             params: str = "chord", tol: float | None = None) -> Network:
    """Glue pieces into a network, merging straight through 2-valent nodes.

    ``nodes`` maps labels to ``(kind, position)`` with kind ``interior``,
    ``exterior`` or ``pass`` (a 2-valent node that must disappear).
    """
    pieces = [Piece(p.a, p.b, np.asarray(p.points, dtype=float)) for p in pieces]
    incident: dict[object, list[int]] = {n: [] for n in nodes}
    for i, p in enumerate(pieces):
        incident[p.a].append(i)
        incident[p.b].append(i)
    alive = [True] * len(pieces)
    for n, (kind, _) in nodes.items():
        if kind != "pass":
            continue
        idx = [i for i in incident[n] if alive[i]]
        if len(idx) != 2 or idx[0] == idx[1]:
            raise InvalidNetworkError(f"pass-through node {n!r} must join two distinct pieces")
        i, j = idx
        p, q = pieces[i], pieces[j]
        pp = p.points if p.b == n else p.points[::-1]
        pa = p.a if p.b == n else p.b
        qq = q.points if q.a == n else q.points[::-1]
        qb = q.b if q.a == n else q.a
        merged = Piece(pa, qb, np.vstack([pp, qq[1:]]))
        alive[j] = False
        pieces[i] = merged
        for end in (pa, qb):
            incident[end] = [i if x == j else x for x in incident[end]]
        incident[n] = []
    kept = [p for p, ok in zip(pieces, alive) if ok]
    labels = [n for n, (kind, _) in nodes.items() if kind != "pass"]
    index = {n: i for i, n in enumerate(labels)}
    curves, inc = [], {n: [] for n in labels}
    for ci, p in enumerate(kept):
        pts = p.points
        grid = chord_params(pts) if params == "chord" else np.linspace(0.0, 1.0, len(pts))
        curves.append(PolyCurve(grid, pts))
        inc[p.a].append((ci, "start"))
        inc[p.b].append((ci, "end"))
    verts = []
    for n in labels:
        kind, pos = nodes[n]
        verts.append(Vertex(kind, tuple(np.asarray(pos, dtype=float)), tuple(inc[n])))
    return Network(tuple(curves), tuple(verts), tol)


def schematic_layout(fan: Fan, desc: TopologyDescriptor, scale: float = 0.5) -> dict[object, np.ndarray]:
    """Positions for tree junctions and two-leaf pass points relative to the fan centre.

    Each junction sits at ``scale`` times the summed directions of its leaf
    cluster divided by the block size, which keeps nested clusters apart.
    Pass points of two-leaf blocks sit on the bisector of their rays.
    """
    out: dict[object, np.ndarray] = {}
    d = fan.directions
    for bi, block in enumerate(desc.blocks):
        if block.size == 2:
            i, j = block.leaves
            mid = d[i] + d[j]
            n = np.linalg.norm(mid)
            if n < 1e-12:
                mid = np.array([-d[i][1], d[i][0]])
                n = 1.0
            out[("pass", bi)] = scale * mid / n
            continue
        tree = block_tree(block)
        for c in tree.junctions:
            out[("junction", bi, c)] = scale * _junction_pull(block, tree, c, d)
    return out


def _junction_pull(block: Block, tree: BlockTree, c: Cluster, d: np.ndarray) -> np.ndarray:
    """Mean direction of the leaves outside the largest of a junction's three sides."""
    sides = [frozenset([e.a]) if isinstance(e.a, int) else e.a for e in tree.edges if e.b == c]
    sides.append(frozenset(block.leaves) - c)
    sizes = sorted(len(s) for s in sides)
    if sizes[0] == sizes[-1]:
        return np.zeros(2)
    big = max(sides, key=len)
    near = sorted(set(block.leaves) - big)
    return d[near].sum(axis=0) / block.size


def assemble_resolution(net: Network, choices: Mapping[int, TopologyDescriptor],
                        radius: float | None = None) -> Network:
    """Combinatorial resolution with straight connectors, for direct counting.

    Every chosen vertex is replaced by its block trees laid out schematically
    inside a small ball; incident curves are shortened to end on the new
    junctions.  Geometry is crude but topology is exact.
    """
    fans = {vi: f for vi, f in zip(net.interior_vertices(), extract_fans(net))}
    if radius is None:
        radius = 0.25 * min(c.length() for c in net.curves)
    new_end: dict[tuple[int, str], object] = {}
    nodes: dict[object, tuple[str, np.ndarray]] = {}
    pieces: list[Piece] = []
    for vi, v in enumerate(net.vertices):
        if vi not in choices:
            nodes[("v", vi)] = (v.kind, np.array(v.position))
            for c, e in v.incident:
                new_end[(c, e)] = ("v", vi)
    for vi, desc in choices.items():
        fan = fans.get(vi)
        if fan is None:
            raise PreconditionError(f"vertex {vi} is not interior")
        if desc.k != fan.k:
            raise PreconditionError(f"choice for vertex {vi} has k={desc.k}, valence is {fan.k}")
        center = np.array(net.vertices[vi].position)
        layout = schematic_layout(fan, desc, scale=0.5 * radius)
        for bi, block in enumerate(desc.blocks):
            if block.size == 2:
                label = ("r", vi, bi)
                nodes[label] = ("pass", center + layout[("pass", bi)])
                for leaf in block.leaves:
                    new_end[fan.sources[leaf]] = label
                continue
            tree = block_tree(block)
            for c in tree.junctions:
                nodes[("r", vi, bi, c)] = ("interior", center + layout[("junction", bi, c)])
            for edge in tree.edges:
                if edge.interior:
                    a, b = ("r", vi, bi, edge.a), ("r", vi, bi, edge.b)
                    pa, pb = nodes[a][1], nodes[b][1]
                    pieces.append(Piece(a, b, np.linspace(pa, pb, 5)))
                else:
                    leaf = edge.a if isinstance(edge.a, int) else edge.b
                    junc = edge.b if isinstance(edge.a, int) else edge.a
                    new_end[fan.sources[leaf]] = ("r", vi, bi, junc)
    for ci, curve in enumerate(net.curves):
        pts = curve.points.copy()
        a, b = new_end[(ci, "start")], new_end[(ci, "end")]
        pts = _retarget(pts, nodes[a][1], nodes[b][1])
        pieces.append(Piece(a, b, pts))
    return assemble(nodes, pieces)


def _retarget(points: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Move the ends of a polyline onto new positions with a linear ramp."""
    u = chord_params(points)[:, None]
    shift0 = start - points[0]
    shift1 = end - points[-1]
    return points + (1 - u) * shift0 + u * shift1


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)
