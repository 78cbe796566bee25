"""Exact Haar expectations of products of matrix entries.

Unitary moments use the Weingarten function on ``S_k``; uniform permutation
moments are falling-factorial counts.  Everything is exact rational
arithmetic (``fractions.Fraction``); orthogonal moments are only available by
seeded Monte Carlo.

Permutations of ``{0..k-1}`` are tuples of images.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

K_MAX = 8


# ---------------------------------------------------------------------------
# permutations


def compose(s: Sequence[int], t: Sequence[int]) -> tuple:
    """``(s o t)(x) = s[t[x]]``."""
    return tuple(s[x] for x in t)


def inverse(s: Sequence[int]) -> tuple:
    out = [0] * len(s)
    for i, x in enumerate(s):
        out[x] = i
    return tuple(out)


def cycle_type(s: Sequence[int]) -> tuple:
    seen = [False] * len(s)
    lens = []
    for i in range(len(s)):
        if not seen[i]:
            c = 0
            j = i
            while not seen[j]:
                seen[j] = True
                j = s[j]
                c += 1
            lens.append(c)
    return tuple(sorted(lens, reverse=True))


def num_cycles(s: Sequence[int]) -> int:
    return len(cycle_type(s))


def partitions(k: int, largest: int | None = None) -> list[tuple]:
    largest = k if largest is None else largest
    if k == 0:
        return [()]
    out = []
    for first in range(min(k, largest), 0, -1):
        for rest in partitions(k - first, first):
            out.append((first,) + rest)
    return out


def perm_of_type(lam: Sequence[int]) -> tuple:
    """A representative permutation with cycle type ``lam``."""
    img = []
    start = 0
    for c in lam:
        img.extend(start + (j + 1) % c for j in range(c))
        start += c
    return tuple(img)


@lru_cache(maxsize=None)
def _class_cycle_counts(k: int):
    """``counts[a][b][c]``: number of tau in class b with #cyc(sigma_a^{-1} tau) = c."""
    lams = partitions(k)
    pos = {lam: i for i, lam in enumerate(lams)}
    reps = [inverse(perm_of_type(lam)) for lam in lams]
    counts = [[Counter() for _ in lams] for _ in lams]
    for tau in itertools.permutations(range(k)):
        b = pos[cycle_type(tau)]
        for a, rinv in enumerate(reps):
            counts[a][b][num_cycles(compose(rinv, tau))] += 1
    return lams, counts


def _solve_fraction(M: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(M)
    A = [row[:] + [rhs[i]] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular Weingarten system")
        A[col], A[piv] = A[piv], A[col]
        pv = A[col][col]
        A[col] = [x / pv for x in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    return [A[r][n] for r in range(n)]


@dataclass(frozen=True)
class WeingartenTable:
    """Exact ``Wg(sigma, N)`` for ``sigma`` in ``S_k``, stored per cycle type."""

    k: int
    N: int
    by_type: dict

    def __call__(self, s: Sequence[int]) -> Fraction:
        return self.by_type[cycle_type(s)]

    def values(self) -> dict:
        return {s: self(s) for s in itertools.permutations(range(self.k))}

    def gram_residual(self) -> Fraction:
        """Max residual of ``sum_tau N^{#cyc(s^-1 tau)} Wg(tau) = [s = id]`` over all s."""
        worst = Fraction(0)
        perms = list(itertools.permutations(range(self.k)))
        ident = tuple(range(self.k))
        wg_of = {s: self(s) for s in perms}
        for s in perms:
            sinv = inverse(s)
            tot = sum(Fraction(self.N) ** num_cycles(compose(sinv, t)) * wg_of[t] for t in perms)
            worst = max(worst, abs(tot - (1 if s == ident else 0)))
        return worst

    def to_json(self) -> str:
        vals = {",".join(map(str, s)): [v.numerator, v.denominator] for s, v in self.values().items()}
        return json.dumps({"k": self.k, "N": self.N, "values": vals}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WeingartenTable":
        obj = json.loads(text)
        by_type = {}
        for key, (num, den) in obj["values"].items():
            s = tuple(int(x) for x in key.split(",")) if key else ()
            by_type[cycle_type(s)] = Fraction(num, den)
        return cls(obj["k"], obj["N"], by_type)


@lru_cache(maxsize=256)
def weingarten_table(k: int, N: int, k_max: int = K_MAX) -> WeingartenTable:
    """Solve the Weingarten system exactly, reduced to conjugacy classes.

    ``Wg`` is a class function, so the ``k! x k!`` Gram system collapses to a
    system indexed by partitions of ``k``.
    """
    if k < 0 or k > k_max:
        raise ValueError(f"k={k} outside 0..{k_max}")
    if N < k:
        raise ValueError(f"N={N} < k={k}: the Gram matrix is singular")
    if k == 0:
        return WeingartenTable(0, N, {(): Fraction(1)})
    lams, counts = _class_cycle_counts(k)
    NN = Fraction(N)
    M = [[sum(cnt * NN ** c for c, cnt in counts[a][b].items()) for b in range(len(lams))]
         for a in range(len(lams))]
    ident = tuple([1] * k)
    rhs = [Fraction(1 if lam == ident else 0) for lam in lams]
    sol = _solve_fraction(M, rhs)
    return WeingartenTable(k, N, dict(zip(lams, sol)))


def wg(s: Sequence[int], N: int) -> Fraction:
    """Exact Weingarten function ``Wg(s, N)`` (requires ``N >= len(s)``)."""
    return weingarten_table(len(s), N)(s)


# ---------------------------------------------------------------------------
# entry products


@dataclass(frozen=True)
class EntrySpec:
    """Product ``prod_t (U_{mid_t})_{x_t y_t}^{eps_t}`` with ``eps_t`` True for conjugates."""

    x: tuple
    y: tuple
    conj: tuple
    matrix_id: tuple | None = None

    def __post_init__(self):
        k = len(self.x)
        mid = self.matrix_id if self.matrix_id is not None else (0,) * k
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", tuple(self.y))
        object.__setattr__(self, "conj", tuple(bool(e) for e in self.conj))
        object.__setattr__(self, "matrix_id", tuple(mid))
        if not (len(self.y) == len(self.conj) == len(self.matrix_id) == k):
            raise ValueError("x, y, conj and matrix_id must share length")

    def groups(self) -> dict:
        out = defaultdict(list)
        for t, m in enumerate(self.matrix_id):
            out[m].append((self.x[t], self.y[t], self.conj[t]))
        return dict(out)


def is_balanced(spec: EntrySpec, group: str = "unitary") -> bool:
    """Necessary condition for a nonzero Haar expectation, per matrix."""
    for facs in spec.groups().values():
        if group == "unitary":
            cx, cy = Counter(), Counter()
            for x, y, c in facs:
                s = -1 if c else 1
                cx[x] += s
                cy[y] += s
            if any(cx.values()) or any(cy.values()):
                return False
        elif group == "orthogonal":
            cx = Counter(x for x, _, _ in facs)
            cy = Counter(y for _, y, _ in facs)
            if any(v % 2 for v in cx.values()) or any(v % 2 for v in cy.values()):
                return False
        else:
            raise ValueError(f"unknown group {group!r}")
    return True


def _matchings(src: Sequence, dst: Sequence):
    """All bijections ``s -> p[s]`` with ``dst[p[s]] == src[s]``."""
    k = len(src)
    used = [False] * k
    cur = [0] * k

    def rec(s):
        if s == k:
            yield tuple(cur)
            return
        for j in range(k):
            if not used[j] and dst[j] == src[s]:
                used[j] = True
                cur[s] = j
                yield from rec(s + 1)
                used[j] = False

    yield from rec(0)


def _single_unitary(facs, N: int) -> Fraction:
    plain = [(x, y) for x, y, c in facs if not c]
    conj = [(x, y) for x, y, c in facs if c]
    if len(plain) != len(conj):
        return Fraction(0)
    k = len(plain)
    if k == 0:
        return Fraction(1)
    if sorted(p[0] for p in plain) != sorted(q[0] for q in conj) or \
            sorted(p[1] for p in plain) != sorted(q[1] for q in conj):
        return Fraction(0)
    table = weingarten_table(k, N)
    sig = list(_matchings([p[0] for p in plain], [q[0] for q in conj]))
    tau = list(_matchings([p[1] for p in plain], [q[1] for q in conj]))
    total = Fraction(0)
    for s in sig:
        for t in tau:
            total += table(compose(s, inverse(t)))
    return total


def unitary_entry_expectation(spec: EntrySpec, N: int) -> Fraction:
    """Exact ``E prod (U_{mid})^{eps}_{x y}`` for independent Haar unitaries."""
    out = Fraction(1)
    for facs in spec.groups().values():
        v = _single_unitary(facs, N)
        if v == 0:
            return Fraction(0)
        out *= v
    return out


def falling(N: int, r: int) -> int:
    out = 1
    for j in range(r):
        out *= N - j
    return out


def _perm_uncentered(constraints, N: int) -> Fraction:
    by_id = defaultdict(set)
    for mid, x, y in constraints:
        by_id[mid].add((x, y))
    out = Fraction(1)
    for pairs in by_id.values():
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        if len(set(xs)) != len(xs) or len(set(ys)) != len(ys):
            return Fraction(0)
        r = len(pairs)
        if r > N:
            return Fraction(0)
        out /= falling(N, r)
    return out


def permutation_entry_expectation(constraints: Iterable, N: int, centered: bool = False) -> Fraction:
    """``E prod_j f_j`` for uniform independent permutations.

    ``constraints`` is a sequence of ``(matrix_id, x, y)`` factors (repeats
    allowed).  Uncentered factors are ``1(sigma(x) = y)``; centered factors
    are ``1(sigma(x) = y) - 1/N``, expanded by inclusion-exclusion.
    """
    cons = list(constraints)
    if not centered:
        return _perm_uncentered(cons, N)
    total = Fraction(0)
    inv_n = Fraction(-1, N)
    for mask in range(1 << len(cons)):
        chosen = [c for j, c in enumerate(cons) if mask >> j & 1]
        rest = len(cons) - len(chosen)
        total += inv_n ** rest * _perm_uncentered(chosen, N)
    return total


# ---------------------------------------------------------------------------
# path weights


@dataclass(frozen=True)
class PathWeight:
    value: object
    stderr: float = 0.0
    exact: bool = True

    def __float__(self):
        return float(self.value)


def path_spec(vertices: Sequence[int], colors: Sequence[int], d: int):
    """Entry factors of ``prod_t (U_{i_t})_{x_{t-1} x_t}``.

    A color ``i > d`` stands for ``U_{i-d}^*`` whose ``(a, b)`` entry is the
    conjugate of ``(U_{i-d})_{b a}``.
    """
    xs, ys, cj, mid = [], [], [], []
    for t, i in enumerate(colors):
        a, b = vertices[t], vertices[t + 1]
        if i <= d:
            xs.append(a), ys.append(b), cj.append(False), mid.append(i)
        else:
            xs.append(b), ys.append(a), cj.append(True), mid.append(i - d)
    return EntrySpec(tuple(xs), tuple(ys), tuple(cj), tuple(mid))


def path_perm_constraints(vertices, colors, d):
    """Factors ``1(sigma_i(x_{t-1}) = x_t)`` written on the base permutations."""
    out = []
    for t, i in enumerate(colors):
        a, b = vertices[t], vertices[t + 1]
        out.append((i, a, b) if i <= d else (i - d, b, a))
    return out


def path_weight(vertices: Sequence[int], colors: Sequence[int], d: int, N: int,
                model: str = "unitary", centered: bool = False, samples: int = 20000,
                seed=0) -> PathWeight:
    """``w(gamma) = E prod_t (U_{i_t})_{x_{t-1} x_t}``.

    Exact for ``unitary`` and ``permutation``; Monte Carlo (with standard
    error) for ``orthogonal``.  Vertices are 0-based or 1-based labels below
    ``N`` (only equalities matter).
    """
    if len(vertices) != len(colors) + 1:
        raise ValueError("need m + 1 vertices for m colors")
    if model == "unitary":
        return PathWeight(unitary_entry_expectation(path_spec(vertices, colors, d), N))
    if model == "permutation":
        return PathWeight(permutation_entry_expectation(
            path_perm_constraints(vertices, colors, d), N, centered))
    if model == "orthogonal":
        from .models import haar_orthogonal, rng_from

        labels = {v: j for j, v in enumerate(dict.fromkeys(vertices))}
        if len(labels) > N:
            return PathWeight(0.0, 0.0, False)
        vals = np.empty(samples)
        for s in range(samples):
            rng = rng_from(seed, s)
            Us = {i: haar_orthogonal(N, rng) for i in sorted({(c - 1) % d + 1 for c in colors})}
            prod = 1.0
            for t, i in enumerate(colors):
                a, b = labels[vertices[t]], labels[vertices[t + 1]]
                prod *= Us[i][a, b] if i <= d else Us[i - d][b, a]
            vals[s] = prod
        return PathWeight(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)), False)
    raise ValueError(f"unknown model {model!r}")


def path_stats(vertices: Sequence[int], colors: Sequence[int], d: int) -> dict:
    """``v``, ``e``, ``e1`` and ``chi = m/2 + e1/2 - v`` of the colored graph."""
    mult = Counter()
    for t, i in enumerate(colors):
        a, b = vertices[t], vertices[t + 1]
        j = i + d if i <= d else i - d
        key = min((a, i, b), (b, j, a))
        mult[key] += 1
    m = len(colors)
    v = len(set(vertices))
    e1 = sum(1 for c in mult.values() if c == 1)
    return {"m": m, "v": v, "e": len(mult), "e1": e1, "chi": m / 2 + e1 / 2 - v,
            "mult": dict(mult)}


def weight_bound_check(vertices, colors, d: int, N: int, c: float = 1.0, weight=None) -> dict:
    """Compare ``|w(gamma)|`` (unitary) with ``c e^{m eta} N^{-m/2} eta^{e1} m^{2 chi}``.

    Returns a dict with ``passed``, ``ratio`` (= |w| / shape) and whether the
    size hypothesis ``2 m^{7/2} <= N^2`` holds.  When ``v > m/2`` the weight
    must vanish exactly.
    """
    st = path_stats(vertices, colors, d)
    m, v, e1, chi = st["m"], st["v"], st["e1"], st["chi"]
    w = weight if weight is not None else path_weight(vertices, colors, d, N).value
    w = abs(Fraction(w)) if not isinstance(w, float) else abs(w)
    hyp = 2 * m ** 3.5 <= N ** 2
    if v > m / 2:
        return {"passed": w == 0, "ratio": 0.0 if w == 0 else math.inf, "forced_zero": True,
                "hypothesis": hyp, **st}
    eta = m * N ** -0.25
    shape = math.exp(m * eta) * N ** (-m / 2) * eta ** e1 * m ** (2 * chi)
    ratio = float(w) / shape if shape > 0 else (0.0 if w == 0 else math.inf)
    return {"passed": ratio <= c, "ratio": ratio, "forced_zero": False, "hypothesis": hyp, **st}
