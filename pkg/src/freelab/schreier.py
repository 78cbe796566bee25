"""Schreier graphs of permutation tuples.

Ball and tangle analysis, disjoint tree-ball witnesses for lower bounds,
and the tangle-free / centered non-backtracking operators at tiny scale.

Paths follow the convention that a path ``(x_0, i_1, x_1, ..., i_m, x_m)``
carries the weight ``prod_t (U_{i_t})_{x_{t-1} x_t}`` and the group element
``g_{i_m} ... g_{i_1}``; ``(U_i)_{x y} = 1`` iff ``y = sigma_i(x)``.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import kernels
from .models import ModelSample, Projector, assemble, operator_norm, rng_from
from .starops import CoefficientFamily, nb_component, schatten_norm_star

# caps for the explicit path summation
MAX_N = 30
MAX_M = 4
MAX_D = 2
MAX_n = 2


# ---------------------------------------------------------------------------
# graph


@dataclass
class SchreierGraph:
    """Colored 2d-regular multigraph with edges ``[x, i, sigma_i(x)]``.

    ``perms`` has shape ``(d, N)``; ``nbr[x, i - 1]`` is the endpoint of the
    half-edge of color ``i`` at ``x`` (colors ``d+1..2d`` use the inverses).
    """

    perms: np.ndarray
    nbr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.perms = np.atleast_2d(np.asarray(self.perms, dtype=np.int64))
        inv = np.argsort(self.perms, axis=1)
        self.nbr = np.ascontiguousarray(np.concatenate([self.perms, inv]).T)

    @property
    def N(self) -> int:
        return self.perms.shape[1]

    @property
    def d(self) -> int:
        return self.perms.shape[0]

    def edges(self):
        """Each colored edge once, as ``(x, i, sigma_i(x))`` with ``i <= d``."""
        return [(x, i + 1, int(self.perms[i, x])) for i in range(self.d) for x in range(self.N)]

    def adjacency(self) -> sp.csr_matrix:
        """``sum_{i=1}^{2d} U_i`` as a sparse integer matrix."""
        N, D = self.N, 2 * self.d
        rows = np.repeat(np.arange(N), D)
        return sp.csr_matrix((np.ones(N * D, dtype=np.int64), (rows, self.nbr.ravel())), shape=(N, N))

    def components(self) -> int:
        return int(connected_components(self.adjacency(), directed=False)[0])

    def validate(self) -> bool:
        """Permutation check plus the handshake audit."""
        N, d = self.N, self.d
        if not all(np.array_equal(np.sort(p), np.arange(N)) for p in self.perms):
            return False
        deg = np.asarray(self.adjacency().sum(axis=1)).ravel()
        return bool(np.all(deg == 2 * d)) and deg.sum() == 2 * len(self.edges()) == 2 * d * N

    def sample(self) -> ModelSample:
        return ModelSample("permutation", self.N, self.d, None, perms=self.perms.copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "color", "y"])
            w.writerows(self.edges())

    @classmethod
    def from_csv(cls, path) -> "SchreierGraph":
        rows = list(csv.DictReader(Path(path).open()))
        d = max(int(r["color"]) for r in rows)
        N = max(max(int(r["x"]), int(r["y"])) for r in rows) + 1
        perms = np.full((d, N), -1, dtype=np.int64)
        for r in rows:
            perms[int(r["color"]) - 1, int(r["x"])] = int(r["y"])
        g = cls(perms)
        if not g.validate():
            raise ValueError("edge list does not describe a tuple of permutations")
        return g


def build(sigma) -> SchreierGraph:
    """Schreier graph of a permutation tuple (array ``(d, N)``, list, or sample)."""
    if isinstance(sigma, SchreierGraph):
        return sigma
    if isinstance(sigma, ModelSample):
        if sigma.perms is None:
            raise ValueError("not a permutation sample")
        sigma = sigma.perms
    g = SchreierGraph(sigma)
    if not g.validate():
        raise ValueError("rows of sigma must be permutations of 0..N-1")
    return g


def random_graph(N: int, d: int, seed) -> SchreierGraph:
    return SchreierGraph(np.stack([rng_from(seed, i).permutation(N) for i in range(d)]))


# ---------------------------------------------------------------------------
# balls and tangles


@dataclass
class BallReport:
    center: int
    radius: int
    layers: list  # layers[r] = vertices at distance r
    edges: list  # colored edges (x, i, y), i <= d, with both ends in the ball
    cycle_rank: int

    @property
    def vertices(self) -> list:
        return [x for layer in self.layers for x in layer]

    def check(self, G: SchreierGraph) -> bool:
        """Layers agree with BFS distances and the rank with ``e - v + 1``."""
        seen = {self.center}
        for r in range(1, len(self.layers)):
            prev = set(self.layers[r - 1])
            for x in self.layers[r]:
                if x in seen or not any(int(G.nbr[x, k]) in prev for k in range(2 * G.d)):
                    return False
                seen.add(x)
        return self.cycle_rank == len(self.edges) - len(seen) + 1


def _bfs(G: SchreierGraph, x: int, h: int) -> dict:
    dist = {x: 0}
    frontier = [x]
    for r in range(h):
        nxt = []
        for u in frontier:
            for w in G.nbr[u]:
                w = int(w)
                if w not in dist:
                    dist[w] = r + 1
                    nxt.append(w)
        frontier = nxt
        if not frontier:
            break
    return dist


def ball_report(G: SchreierGraph, x: int, h: int) -> BallReport:
    dist = _bfs(G, x, h)
    layers = [[] for _ in range(max(dist.values()) + 1)]
    for v, r in dist.items():
        layers[r].append(v)
    edges = [(a, i, b) for a, i, b in G.edges() if a in dist and b in dist]
    return BallReport(x, h, [sorted(l) for l in layers], edges, len(edges) - len(dist) + 1)


def tree_ball_bound(d: int, h: int) -> int:
    """Vertex count of the radius-``h`` ball in the 2d-regular tree."""
    if h == 0:
        return 1
    q = 2 * d - 1
    return 1 + 2 * d * (q ** h - 1) // (q - 1) if q > 1 else 1 + 2 * h


def ball_ranks(G: SchreierGraph, h: int, backend=None) -> np.ndarray:
    return kernels.ball_cycle_ranks(G.nbr, h, backend=backend)


def is_tangle_free(G: SchreierGraph, h: int, backend=None) -> bool:
    """True when every radius-``h`` ball spans at most one cycle."""
    return bool(np.all(ball_ranks(G, h, backend) <= 1))


def tangle_free_rate(N: int, d: int, h: int, samples: int = 100, seed=0) -> dict:
    """Empirical fraction of uniform tuples whose graph is ``h``-tangle-free."""
    tangled = []
    for s in range(samples):
        r = ball_ranks(random_graph(N, d, (seed, s)), h)
        tangled.append(int(np.sum(r >= 2)))
    tangled = np.array(tangled)
    return {"rate": float(np.mean(tangled == 0)), "samples": samples,
            "tangled_vertices_mean": float(tangled.mean())}


def find_disjoint_tree_balls(G: SchreierGraph, p: int, seed=0, tries: int = 64):
    """Vertices ``(x, y)`` whose radius-``p`` balls are disjoint and acyclic, or ``None``.

    Random centers are tried first, then every acyclic center in order.
    """
    cand = np.flatnonzero(ball_ranks(G, p) == 0)
    if cand.size < 2:
        return None
    rng = np.random.default_rng(seed)
    # balls are disjoint iff the centers are more than 2p apart
    for _ in range(tries):
        x, y = (int(v) for v in rng.choice(cand, 2, replace=False))
        if y not in _bfs(G, x, 2 * p):
            return x, y
    for x in cand:
        near = _bfs(G, int(x), 2 * p)
        for y in cand:
            if int(y) not in near:
                return int(x), int(y)
    return None


def find_disjoint_balls(G: SchreierGraph, h: int):
    """Any two vertices with disjoint radius-``h`` balls (cycles allowed)."""
    for x in range(G.N):
        near = _bfs(G, x, 2 * h)
        if len(near) < G.N:
            return x, next(y for y in range(G.N) if y not in near)
    return None


# ---------------------------------------------------------------------------
# lower bounds


@dataclass
class LowerBoundCertificate:
    value: float
    p: int
    witness: tuple
    measured: float
    method: str
    moments: str = "n/a"  # "structural", "screened (not proven)" or "n/a"

    @property
    def holds(self) -> bool:
        return self.measured >= self.value * (1 - 1e-6) - 1e-12


def _measured_norm(coeffs: CoefficientFamily, G: SchreierGraph) -> float:
    if coeffs.is_zero:
        return 0.0
    op = assemble(coeffs, G.sample())
    return operator_norm(op, Projector(G.N), tol=1e-10)


def _certify(cert: LowerBoundCertificate) -> LowerBoundCertificate:
    if not cert.holds:
        raise RuntimeError(f"certificate {cert.value} exceeds measured norm {cert.measured}")
    return cert


def lower_bound_certificate(coeffs: CoefficientFamily, sigma, p: int, seed=0,
                            measure: bool = True):
    """Certify ``||A_N Pi_N|| >= ||A_star||_p`` from a pair of disjoint tree balls.

    Returns ``None`` when no witness exists at radius ``p``.  When ``measure``
    is set the bound is re-checked against the computed norm.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    G = build(sigma)
    wit = find_disjoint_tree_balls(G, p, seed=seed)
    if wit is None:
        return None
    val = schatten_norm_star(coeffs, p)
    meas = _measured_norm(coeffs, G) if measure else math.nan
    cert = LowerBoundCertificate(val, p, wit, meas, "tree-balls")
    return _certify(cert) if measure else cert


def alon_boppana_p(N: int, d: int) -> int:
    """``(1/4) log N / log 2d`` rounded down to an even integer, at least 2."""
    raw = 0.25 * math.log(N) / math.log(2 * d)
    return max(2, 2 * int(raw // 2))


def nonnegative_moments(coeffs: CoefficientFamily, cutoff: int, tol: float = 1e-12,
                        max_words: int = 2_000_000) -> str:
    """Screen the joint moments ``tau(a_{i_1}^{e_1} ... a_{i_k}^{e_k})``.

    Returns ``"structural"`` for entrywise nonnegative real coefficients and
    ``"screened (not proven)"`` when all words up to ``cutoff`` pass.  Raises
    ``ValueError`` on a negative (or non-real) moment or when the screen
    would exceed ``max_words``.
    """
    a = coeffs.a
    if np.all(np.abs(a.imag) == 0) and np.all(a.real >= 0):
        return "structural"
    letters = [x for m in a for x in (m, m.conj().T)]
    n = coeffs.n
    total = sum(len(letters) ** k for k in range(1, cutoff + 1))
    if total > max_words:
        raise ValueError(f"moment screen needs {total} words, above max_words={max_words}")
    layer = [np.eye(n, dtype=complex)]
    for k in range(1, cutoff + 1):
        layer = [w @ x for w in layer for x in letters]
        tr = np.array([np.trace(w) / n for w in layer])
        bad = (tr.real < -tol) | (np.abs(tr.imag) > tol)
        if bad.any():
            raise ValueError(f"negative or non-real joint moment at length {k}")
    return "screened (not proven)"


def alon_boppana(coeffs: CoefficientFamily, sigma, cutoff: int | None = None,
                 measure: bool = True) -> LowerBoundCertificate:
    """Lower bound ``||A_N Pi_N|| >= ||A_star||_p`` valid for every ``sigma``.

    Needs nonnegative joint moments; ``p`` follows :func:`alon_boppana_p` and
    the disjoint balls have radius ``h = 2 ceil(p / 2)``.
    """
    G = build(sigma)
    p = alon_boppana_p(G.N, G.d)
    h = 2 * math.ceil(p / 2)
    tag = nonnegative_moments(coeffs, 2 * h if cutoff is None else cutoff)
    wit = find_disjoint_balls(G, h)
    if wit is None:
        raise ValueError(f"no two disjoint balls of radius {h} at N={G.N}")
    val = schatten_norm_star(coeffs, p)
    meas = _measured_norm(coeffs, G) if measure else math.nan
    cert = LowerBoundCertificate(val, p, wit, meas, "alon-boppana", tag)
    return _certify(cert) if measure else cert


# ---------------------------------------------------------------------------
# tangle-free and centered operators (explicit path sums)


def _star(i: int, d: int) -> int:
    return i + d if i <= d else i - d


def _rank(verts, colors, d) -> int:
    """Cycle rank of the graph traced by a path (colored edges, loops count)."""
    if not colors:
        return 0
    edges = {min((a, i, b), (b, _star(i, d), a))
             for a, i, b in zip(verts[:-1], colors, verts[1:])}
    return len(edges) - len(set(verts)) + 1


@lru_cache(maxsize=None)
def _open_patterns(length: int, max_v: int) -> tuple:
    """Restricted growth strings of the given length with at most ``max_v`` labels."""
    out = []

    def rec(prefix, top):
        if len(prefix) == length:
            out.append(tuple(prefix))
            return
        for v in range(min(top + 2, max_v)):
            rec(prefix + [v], max(top, v))

    rec([0], 0)
    return tuple(out)


@lru_cache(maxsize=8)
def _injections(N: int, v: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(N), v)), dtype=np.int64).reshape(-1, v)


def _pattern_sum(pattern, mats, N) -> np.ndarray:
    """``sum`` over injective labelings of ``prod_t mats[t][x_{t-1}, x_t]`` into ``(x_0, x_m)``."""
    lab = _injections(N, max(pattern) + 1)
    w = np.ones(lab.shape[0], dtype=np.complex128)
    for t, M in enumerate(mats):
        w = w * M[lab[:, pattern[t]], lab[:, pattern[t + 1]]]
        if not w.any():
            return None
    out = np.zeros((N, N), dtype=np.complex128)
    np.add.at(out, (lab[:, pattern[0]], lab[:, pattern[-1]]), w)
    return out


@dataclass
class CenteredOperators:
    """``B``, its tangle-free restriction, the centered version and the remainders."""

    B: np.ndarray
    B_tilde: np.ndarray
    B_centered: np.ndarray
    R: list
    N: int
    n: int
    short_tangle_free: bool

    def projector(self) -> np.ndarray:
        return np.kron(np.eye(self.n), np.eye(self.N) - np.full((self.N, self.N), 1.0 / self.N))

    def identity_residual(self) -> float:
        """``max |B Pi - (B_centered Pi - (1/N) sum_k R_k Pi)|``."""
        P = self.projector()
        rhs = self.B_centered @ P - sum((Rk @ P for Rk in self.R), np.zeros_like(P)) / self.N
        return float(np.max(np.abs(self.B @ P - rhs)))

    def restriction_residual(self) -> float:
        return float(np.max(np.abs(self.B - self.B_tilde)))


def short_tangle_free(G: SchreierGraph, m: int) -> bool:
    """True when no non-backtracking path of length ``m`` in ``G`` traces a tangled graph.

    Shorter paths extend to length ``m``, so this covers every length ``<= m``.
    Any ``h``-tangle-free graph with ``h >= m`` passes.
    """
    d = G.d
    if m == 0:
        return True
    for x in range(G.N):
        stack = [((x,), ())]
        while stack:
            verts, cols = stack.pop()
            if len(cols) == m:
                if _rank(verts, cols, d) >= 2:
                    return False
                continue
            for i in range(1, 2 * d + 1):
                if cols and i == _star(cols[-1], d):
                    continue
                stack.append((verts + (int(G.nbr[verts[-1], i - 1]),), cols + (i,)))
    return True


def tangle_free_instance(N: int, d: int, m: int, seed=0, max_tries: int = 1000) -> SchreierGraph:
    """First graph in a seeded stream that passes :func:`short_tangle_free`."""
    for t in range(max_tries):
        G = random_graph(N, d, (seed, t))
        if short_tangle_free(G, m):
            return G
    raise RuntimeError("no tangle-free instance found")


def centered_nb_operators(coeffs: CoefficientFamily, sigma, ell: int, m: int) -> CenteredOperators:
    """Explicit path sums for ``B``, ``B~``, the centered ``B_`` and ``R_1..R_m``.

    Tiny scale only: ``N <= 30``, ``m <= 4``, ``d <= 2``, ``n <= 2``.
    Tangle-free paths are those whose traced graph has cycle rank at most one.
    ``B_`` uses ``U_i - J/N``; ``R_k`` sums over tangled paths whose pieces
    before and after step ``k`` are tangle-free, with centered factors before
    step ``k``, no factor at step ``k`` and plain factors after.
    """
    G = build(sigma)
    N, d, n = G.N, G.d, coeffs.n
    if N > MAX_N or m > MAX_M or d > MAX_D or n > MAX_n or coeffs.d != d:
        raise ValueError(f"scale cap exceeded (N<={MAX_N}, m<={MAX_M}, d<={MAX_D}, n<={MAX_n})")
    if m < 0 or m > ell:
        raise ValueError("need 0 <= m <= ell")
    U = [None] + [np.eye(N)[G.nbr[:, i]] for i in range(2 * d)]
    J = np.full((N, N), 1.0 / N)
    Uc = [None] + [u - J for u in U[1:]]
    ones = np.ones((N, N))
    dim = n * N
    B, Bt, Bc = (np.zeros((dim, dim), dtype=np.complex128) for _ in range(3))
    R = [np.zeros((dim, dim), dtype=np.complex128) for _ in range(m)]
    comp = nb_component(coeffs, ell, m)
    if m == 0:
        blk = comp[()]
        B[:] = Bt[:] = Bc[:] = np.kron(blk, np.eye(N))
        return CenteredOperators(B, Bt, Bc, R, N, n, True)
    pats = _open_patterns(m + 1, max(1, m - 1))  # tangled paths have at most m - 1 vertices
    for g, blk in comp.items():
        if not np.any(blk):
            continue
        cols = tuple(reversed(g))
        full = np.linalg.multi_dot([U[i] for i in cols] + [np.eye(N)])
        fullc = np.linalg.multi_dot([Uc[i] for i in cols] + [np.eye(N)])
        tang, tangc = np.zeros((N, N), complex), np.zeros((N, N), complex)
        Rk = [np.zeros((N, N), complex) for _ in range(m)]
        for pat in pats:
            if _rank(pat, cols, d) < 2:
                continue
            s = _pattern_sum(pat, [U[i] for i in cols], N)
            if s is not None:
                tang += s
            s = _pattern_sum(pat, [Uc[i] for i in cols], N)
            if s is not None:
                tangc += s
            for k in range(1, m + 1):
                if _rank(pat[:k], cols[:k - 1], d) > 1 or _rank(pat[k:], cols[k:], d) > 1:
                    continue
                mats = [Uc[i] for i in cols[:k - 1]] + [ones] + [U[i] for i in cols[k:]]
                s = _pattern_sum(pat, mats, N)
                if s is not None:
                    Rk[k - 1] += s
        B += np.kron(blk, full)
        Bt += np.kron(blk, full - tang)
        Bc += np.kron(blk, fullc - tangc)
        for k in range(m):
            R[k] += np.kron(blk, Rk[k])
    return CenteredOperators(B, Bt, Bc, R, N, n, short_tangle_free(G, m))


def _schatten(X: np.ndarray, p: float) -> float:
    s = np.linalg.svd(X, compute_uv=False)
    if math.isinf(p):
        return float(s.max(initial=0.0))
    return float(np.mean(s ** p) ** (1.0 / p))


@dataclass
class DecompositionReport:
    lhs: float
    centered: float
    remainders: list
    N: int

    @property
    def rhs(self) -> float:
        return self.centered + sum(self.remainders) / self.N

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-10) + 1e-12


def norm_decomposition_check(coeffs: CoefficientFamily, sigma, ell: int, m: int,
                             p: float = math.inf, ops: CenteredOperators | None = None
                             ) -> DecompositionReport:
    """Compare ``||B Pi||_p`` with ``||B_||_p + (1/N) sum_k ||R_k||_p`` (normalized norms)."""
    ops = ops or centered_nb_operators(coeffs, sigma, ell, m)
    lhs = _schatten(ops.B @ ops.projector(), p)
    return DecompositionReport(lhs, _schatten(ops.B_centered, p),
                               [_schatten(Rk, p) for Rk in ops.R], ops.N)
