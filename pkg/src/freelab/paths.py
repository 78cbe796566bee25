"""Closed non-backtracking colored paths and their equivalence classes.

A path ``gamma = (x_0, i_1, x_1, ..., i_m, x_m)`` is stored as a vertex tuple
of length ``m + 1`` and a color tuple of length ``m`` with colors in
``1..2d`` and ``i* = i +- d``.  Two paths are equivalent when one is the image
of the other under a vertex relabeling together with a permutation of colors
at each vertex (acting on half-edges).  The canonical representative is the
lexicographically minimal image of the interleaved sequence.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .freegroup import star as _star
from .weingarten import falling, path_stats, path_weight

DEFAULT_BUDGET = 5_000_000


@dataclass(frozen=True)
class ColoredPath:
    vertices: tuple
    colors: tuple
    d: int

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(int(x) for x in self.vertices))
        object.__setattr__(self, "colors", tuple(int(i) for i in self.colors))
        if len(self.vertices) != len(self.colors) + 1:
            raise ValueError("need m + 1 vertices for m colors")
        if self.vertices[0] != self.vertices[-1]:
            raise ValueError("path is not closed")
        D = 2 * self.d
        if any(not 1 <= i <= D for i in self.colors):
            raise ValueError(f"colors must lie in 1..{D}")
        for a, b in zip(self.colors, self.colors[1:]):
            if b == _star(a, self.d):
                raise ValueError("path backtracks")

    @property
    def m(self) -> int:
        return len(self.colors)

    def stats(self) -> "PathStats":
        return PathStats.of(self)

    def word(self) -> tuple:
        """``g(gamma) = g_{i_m} ... g_{i_1}`` as a letter tuple (leftmost applied last)."""
        return tuple(reversed(self.colors))


@dataclass(frozen=True)
class PathStats:
    m: int
    v: int
    e: int
    e1: int

    @property
    def chi(self) -> Fraction:
        return Fraction(self.m + self.e1, 2) - self.v

    @classmethod
    def of(cls, p: ColoredPath) -> "PathStats":
        st = path_stats(p.vertices, p.colors, p.d)
        return cls(st["m"], st["v"], st["e"], st["e1"])

    def check(self) -> bool:
        return self.chi >= 0 and self.v <= self.e and 2 * self.e <= self.m + self.e1


# ---------------------------------------------------------------------------
# enumeration


def _nb_colorings(d: int, m: int) -> Iterator[tuple]:
    D = 2 * d

    def rec(prefix):
        if len(prefix) == m:
            yield tuple(prefix)
            return
        bad = _star(prefix[-1], d) if prefix else None
        for i in range(1, D + 1):
            if i != bad:
                prefix.append(i)
                yield from rec(prefix)
                prefix.pop()

    yield from rec([])


def _closed_patterns(m: int) -> Iterator[tuple]:
    """Restricted-growth vertex sequences ``x_0 = 0, ..., x_m = x_0``."""
    if m == 0:
        yield (0,)
        return

    def rec(prefix, top):
        if len(prefix) == m:
            yield tuple(prefix) + (0,)
            return
        for v in range(top + 2):
            prefix.append(v)
            yield from rec(prefix, max(top, v))
            prefix.pop()

    yield from rec([0], 0)


def enumerate_patterns(d: int, m: int, max_v: int | None = None) -> Iterator[tuple]:
    """``(vertices, colors)`` for ``P_m`` up to vertex relabeling.

    Vertex tuples are restricted-growth strings, so each one stands for
    ``(N)_v`` labeled paths.
    """
    if m < 1:
        return
    pats = [p for p in _closed_patterns(m) if max_v is None or max(p) + 1 <= max_v]
    for cols in _nb_colorings(d, m):
        for p in pats:
            yield p, cols


def path_count(N: int, d: int, m: int) -> int:
    """``|P_m| = N^m * 2d (2d-1)^{m-1}`` (vertices ``x_0..x_{m-1}`` are free)."""
    if m == 0:
        return N
    return N ** m * 2 * d * (2 * d - 1) ** (m - 1)


def enumerate_paths(N: int, d: int, m: int, budget: int = DEFAULT_BUDGET) -> Iterator[ColoredPath]:
    """Exhaustive stream of ``P_m`` with labeled vertices in ``0..N-1``."""
    total = path_count(N, d, m)
    if total > budget:
        raise MemoryError(f"|P_m| = {total} exceeds budget {budget}")
    for cols in _nb_colorings(d, m):
        for xs in itertools.product(range(N), repeat=m):
            yield ColoredPath(xs + (xs[0],), cols, d)


# ---------------------------------------------------------------------------
# colored graph and kernel


def edge_key(a: int, i: int, b: int, d: int) -> tuple:
    """Representative of the colored edge ``[a, i, b] = [b, i*, a]``."""
    return min((a, i, b), (b, _star(i, d), a))


@dataclass
class ColoredGraph:
    vertices: tuple
    mult: dict  # edge key -> multiplicity
    d: int

    @classmethod
    def of(cls, p: ColoredPath) -> "ColoredGraph":
        mult = Counter()
        for t, i in enumerate(p.colors):
            mult[edge_key(p.vertices[t], i, p.vertices[t + 1], p.d)] += 1
        verts = tuple(sorted(set(p.vertices)))
        return cls(verts, dict(mult), p.d)

    def degree(self) -> dict:
        deg = Counter()
        for a, _, b in self.mult:
            deg[a] += 1
            deg[b] += 1
        return dict(deg)

    def edges(self) -> list:
        return [(a, b) for a, _, b in self.mult]


@dataclass
class KernelEdge:
    start: int
    end: int
    colors: tuple        # oriented as first traversed by the path
    vertices: tuple
    first_time: int

    @property
    def length(self) -> int:
        return len(self.colors)

    def profile(self, d: int) -> tuple:
        counts = Counter(self.colors)
        return (self.colors[0], self.colors[-1], tuple(counts[i] for i in range(1, 2 * d + 1)))


@dataclass
class KernelGraph:
    vertices: tuple
    edges: list
    v: int
    e: int

    @property
    def v_hat(self) -> int:
        return len(self.vertices)

    @property
    def e_hat(self) -> int:
        return len(self.edges)

    def check(self) -> bool:
        """``e_hat = v_hat + (e - v)``."""
        return self.e_hat == self.v_hat + self.e - self.v

    def profiles(self, d: int) -> tuple:
        return tuple(f.profile(d) for f in self.edges)

    def terminal_colors(self) -> tuple:
        return tuple(f.colors[-1] for f in self.edges)


def kernel_graph(p: ColoredPath) -> KernelGraph:
    """Contract degree-2 vertices (other than ``x_0``) into maximal paths.

    The path visits each kernel edge as a whole, so the kernel edges are the
    segments between consecutive visits of kernel vertices; edges are listed
    in order of first traversal and oriented accordingly.
    """
    g = ColoredGraph.of(p)
    deg = g.degree()
    x0 = p.vertices[0]
    hat = {x for x, k in deg.items() if k >= 3} | {x0}
    d = p.d
    seen = {}
    edges = []
    start = 0
    for t in range(1, p.m + 1):
        if p.vertices[t] not in hat:
            continue
        cols = p.colors[start:t]
        verts = p.vertices[start:t + 1]
        key = edge_key(verts[0], cols[0], verts[1], d)
        if key not in seen:
            seen[key] = len(edges)
            edges.append(KernelEdge(verts[0], verts[-1], cols, verts, start))
            for s in range(1, len(cols)):
                seen[edge_key(verts[s], cols[s], verts[s + 1], d)] = seen[key]
        start = t
    kg = KernelGraph(tuple(sorted(hat)), edges, len(g.vertices), len(g.mult))
    if not kg.check():
        raise ArithmeticError("kernel graph violates e_hat = v_hat + e - v")
    return kg


# ---------------------------------------------------------------------------
# canonical forms


def canonical_form(vertices: Sequence[int], colors: Sequence[int], d: int) -> tuple:
    """Lexicographically minimal image ``(vertices', colors')`` under the relabeling group.

    Depth-first search over the choices in sequence order; a choice is a new
    label for an unseen vertex (always the smallest unused) or a new color for
    an unassigned half-edge.  The first complete branch is the minimum.
    """
    m = len(colors)
    D = 2 * d
    vmap: dict = {}
    hmap: dict = {}   # (orig vertex, orig color) -> new color
    used: dict = defaultdict(set)
    out_v = [0] * (m + 1)
    out_c = [0] * m
    vmap[vertices[0]] = 0

    def rec(t):
        if t == m:
            return True
        a, b, i = vertices[t], vertices[t + 1], colors[t]
        j = _star(i, d)
        fa = hmap.get((a, i))
        fb = hmap.get((b, j))
        if fa is not None:
            cands = [fa]
        elif fb is not None:
            cands = [_star(fb, d)]
        else:
            cands = range(1, D + 1)
        for c in cands:
            cs = _star(c, d)
            added = []
            if fa is None:
                if c in used[a]:
                    continue
                hmap[(a, i)] = c
                used[a].add(c)
                added.append((a, i, c))
            ok = True
            if fb is None:
                if cs in used[b]:
                    ok = False
                else:
                    hmap[(b, j)] = cs
                    used[b].add(cs)
                    added.append((b, j, cs))
            elif fb != cs:
                ok = False
            if ok:
                new_vertex = b not in vmap
                if new_vertex:
                    vmap[b] = len(vmap)
                out_c[t] = c
                out_v[t + 1] = vmap[b]
                if rec(t + 1):
                    return True
                if new_vertex:
                    del vmap[b]
            for x, y, z in added:
                del hmap[(x, y)]
                used[x].discard(z)
        return False

    if not rec(0):
        raise ArithmeticError("no admissible relabeling (invalid path?)")
    return tuple(out_v), tuple(out_c)


def is_relabeling(p: ColoredPath, q: ColoredPath) -> bool:
    """Whether ``q`` is the positionwise image of ``p`` under some admissible relabeling."""
    if p.m != q.m or p.d != q.d:
        return False
    d = p.d
    tau, inv = {}, {}
    beta: dict = {}
    for x, y in zip(p.vertices, q.vertices):
        if tau.setdefault(x, y) != y or inv.setdefault(y, x) != x:
            return False
    for t in range(p.m):
        pairs = ((p.vertices[t], p.colors[t], q.colors[t]),
                 (p.vertices[t + 1], _star(p.colors[t], d), _star(q.colors[t], d)))
        for x, i, c in pairs:
            fwd = beta.setdefault(x, ({}, {}))
            if fwd[0].setdefault(i, c) != c or fwd[1].setdefault(c, i) != i:
                return False
    return True


@dataclass
class PathClass:
    """Class data of a path: canonical representative and the three keys."""

    path: ColoredPath
    canonical: ColoredPath
    stats: PathStats
    kernel: KernelGraph

    @property
    def coarse_key(self) -> tuple:
        return (self.canonical.vertices, self.canonical.colors)

    @property
    def fine_key(self) -> tuple:
        return self.coarse_key + (self.kernel.profiles(self.path.d),)

    @property
    def terminal_key(self) -> tuple:
        return self.coarse_key + (self.kernel.terminal_colors(),)

    def key(self, kind: str = "coarse") -> tuple:
        return {"coarse": self.coarse_key, "fine": self.fine_key,
                "terminal": self.terminal_key}[kind]


def canonicalize(p: ColoredPath) -> PathClass:
    """Canonical representative plus coarse, fine (profile) and terminal-color keys.

    Relabelings act positionwise, so kernel edges of equivalent paths
    correspond through traversal times; profiles are listed in first
    traversal order, which makes the fine key well defined.
    """
    cv, cc = canonical_form(p.vertices, p.colors, p.d)
    return PathClass(p, ColoredPath(cv, cc, p.d), p.stats(), kernel_graph(p))


# ---------------------------------------------------------------------------
# census


@dataclass
class CensusRow:
    m: int
    v: int
    e1: int
    chi: Fraction
    coarse_count: int
    fine_count: int
    terminal_count: int
    coarse_bound: float
    fine_factor: float
    terminal_factor: float

    @property
    def passed(self) -> bool:
        return (self.coarse_count <= self.coarse_bound
                and self.fine_count <= self.fine_factor * self.coarse_count
                and self.terminal_count <= self.terminal_factor * self.coarse_count
                and self.chi >= 0)


def class_census(d: int, m: int, N_cap: int | None = None) -> list[CensusRow]:
    """Count coarse, fine and terminal-color classes of ``P_m`` per ``(v, e1)``.

    Bounds reported per cell: ``m^{6 chi + 4}`` for coarse classes,
    ``(2d m^d)^{6 chi + 4}`` for the fine inflation factor and
    ``(2d)^{3 chi + 2}`` for the terminal-color one.
    """
    cells = defaultdict(lambda: (set(), set(), set()))
    cache = {}
    for verts, cols in enumerate_patterns(d, m, N_cap):
        p = ColoredPath(verts, cols, d)
        st = p.stats()
        cf = canonical_form(verts, cols, d)
        kg = kernel_graph(p)
        c, f, tm = cells[(st.v, st.e1)]
        c.add(cf)
        f.add((cf, kg.profiles(d)))
        tm.add((cf, kg.terminal_colors()))
        cache[(st.v, st.e1)] = st.chi
    rows = []
    for (v, e1), (c, f, tm) in sorted(cells.items()):
        chi = cache[(v, e1)]
        rows.append(CensusRow(m, v, e1, chi, len(c), len(f), len(tm),
                              float(m) ** float(6 * chi + 4),
                              float(2 * d * m ** d) ** float(6 * chi + 4),
                              float(2 * d) ** float(3 * chi + 2)))
    return rows


CENSUS_FIELDS = ("m", "v", "e1", "chi", "coarse_count", "fine_count", "bound", "pass")


def census_record(r: CensusRow) -> dict:
    """One census row in the CSV schema (all values as written)."""
    return dict(zip(CENSUS_FIELDS, (r.m, r.v, r.e1, str(r.chi), r.coarse_count, r.fine_count,
                                    f"{r.coarse_bound:.6g}", r.passed)))


def census_to_csv(rows: Iterable[CensusRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CENSUS_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(census_record(r))


# ---------------------------------------------------------------------------
# exact trace oracle


def expected_nb_trace(coeffs, ell: int, m: int, N: int, model: str = "unitary",
                      centered: bool = False, grouped: bool = False) -> complex:
    """Exact ``E tau(B^{(ell, m)})`` as a path sum.

    ``E tau(B) = (1/N) tau_1(sum_gamma a(ell, gamma) w(gamma))`` with
    ``a(ell, gamma) = (A_star^ell)_{g(gamma), o}``.  Labeled paths sharing a
    vertex pattern contribute ``(N)_v`` equal terms.  With ``grouped=True``
    weights are computed once per fine class (valid for the unitary model).
    """
    from .starops import power_entries

    if m == 0:
        from .starops import free_moment
        return complex(free_moment(coeffs, ell))
    if m > ell:
        return 0j
    d, n = coeffs.d, coeffs.n
    bidx, E = power_entries(coeffs, ell)
    total = np.zeros((n, n), dtype=np.complex128)
    exact_sum = defaultdict(Fraction)
    wcache = {}
    for verts, cols in enumerate_patterns(d, m, N):
        v = max(verts) + 1
        if grouped:
            p = ColoredPath(verts, cols, d)
            key = (canonical_form(verts, cols, d), kernel_graph(p).profiles(d))
            if key not in wcache:
                wcache[key] = path_weight(verts, cols, d, N, model, centered).value
            w = wcache[key]
        else:
            w = path_weight(verts, cols, d, N, model, centered).value
        if w == 0:
            continue
        exact_sum[tuple(reversed(cols))] += Fraction(w) * falling(N, v)
    for g, wsum in exact_sum.items():
        total += E[bidx.index(g)] * float(wsum)
    return complex(np.trace(total) / n / N)


def nb_operator(coeffs, ell: int, m: int, smp) -> np.ndarray:
    """Dense ``B^{(ell, m)} = sum_{|g| = m} (A_star^ell)_{g, o} x U(g)``.

    ``U(g)`` follows the homomorphism ``g_i -> U_i`` so that
    ``sum_m B^{(ell, m)} = A_N^ell`` holds sample by sample.
    """
    from .starops import nb_component

    mats = smp.matrices()
    N = smp.N
    out = np.zeros((coeffs.n * N, coeffs.n * N), dtype=np.complex128)
    for g, blk in nb_component(coeffs, ell, m).items():
        if not np.any(blk):
            continue
        U = np.eye(N, dtype=np.complex128)
        for i in g:
            U = U @ mats[i - 1]
        out += np.kron(blk, U)
    return out


# ---------------------------------------------------------------------------
# tangles


def ball_cycle_rank(vertices: Iterable, edges: Sequence[tuple], center, h: int) -> int:
    """Cycle-space dimension of the subgraph spanned by the radius-``h`` ball.

    ``edges`` is a list of ``(a, b)`` pairs; parallel edges and loops count.
    """
    adj = defaultdict(list)
    for a, b in edges:
        adj[a].append(b)
        if a != b:
            adj[b].append(a)
    dist = {center: 0}
    frontier = [center]
    for r in range(h):
        nxt = []
        for u in frontier:
            for w in adj[u]:
                if w not in dist:
                    dist[w] = r + 1
                    nxt.append(w)
        frontier = nxt
    inside = [(a, b) for a, b in edges if a in dist and b in dist]
    # the ball is connected, so rank = e - v + 1
    return len(inside) - len(dist) + 1


def tangle_detect(obj, h: int) -> bool:
    """True when some radius-``h`` ball spans two or more independent cycles.

    ``obj`` is a :class:`ColoredPath` or a ``(vertices, edges)`` pair.
    """
    if isinstance(obj, ColoredPath):
        g = ColoredGraph.of(obj)
        verts, edges = g.vertices, g.edges()
    else:
        verts, edges = obj
    return any(ball_cycle_rank(verts, edges, x, h) >= 2 for x in verts)
