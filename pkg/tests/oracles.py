"""Independent brute-force oracles used across the test-suite."""

import itertools
from fractions import Fraction

import numpy as np


def naive_reduce(letters, d):
    """Repeatedly delete the first adjacent inverse pair."""
    w = list(letters)
    changed = True
    while changed:
        changed = False
        for t in range(len(w) - 1):
            a, b = w[t], w[t + 1]
            if abs(a - b) == d:
                del w[t:t + 2]
                changed = True
                break
    return tuple(w)


def word_sum_power(a, ell, d):
    """{reduced word: sum of a(w)} over all w in {0..2d}^ell (brute force)."""
    n = a.shape[1]
    out = {}
    for w in itertools.product(range(2 * d + 1), repeat=ell):
        # w = (w_1, ..., w_ell) applied in order; a(w) = a_{w_ell} ... a_{w_1}
        m = np.eye(n, dtype=complex)
        for x in w:
            m = a[x] @ m
        g = naive_reduce(tuple(x for x in reversed(w) if x), d)
        out[g] = out.get(g, 0) + m
    return out


def word_sum_corner(a, k, i, d):
    """Entries of C^{(k,i)}: walks from the unit with first step i never returning."""
    n = a.shape[1]
    out = {}
    for rest in itertools.product(range(2 * d + 1), repeat=k - 1):
        w = (i,) + rest
        ok = True
        for t in range(1, k + 1):
            if naive_reduce(tuple(x for x in reversed(w[:t]) if x), d) == ():
                ok = False
                break
        if not ok:
            continue
        m = np.eye(n, dtype=complex)
        for x in w:
            m = a[x] @ m
        g = naive_reduce(tuple(x for x in reversed(w) if x), d)
        out[g] = out.get(g, 0) + m
    return out


def brute_perm_expectation(constraints, N):
    """Average of prod 1(sigma_id(x) = y) over all tuples of permutations of [N]."""
    ids = sorted({c[0] for c in constraints})
    total = Fraction(0)
    count = 0
    for perms in itertools.product(itertools.permutations(range(N)), repeat=len(ids)):
        pm = dict(zip(ids, perms))
        ok = all(pm[mid][x] == y for mid, x, y in constraints)
        total += 1 if ok else 0
        count += 1
    return total / count


def _cycles(p):
    seen, c = set(), 0
    for i in range(len(p)):
        if i not in seen:
            c += 1
            j = i
            while j not in seen:
                seen.add(j)
                j = p[j]
    return c


def full_gram_weingarten(k, N):
    """Wg on all of S_k by Gauss-Jordan on the full k! x k! Gram matrix."""
    perms = list(itertools.permutations(range(k)))
    inv = {p: tuple(sorted(range(k), key=lambda x: p[x])) for p in perms}
    G = [[Fraction(N) ** _cycles(tuple(inv[s][x] for x in t)) for t in perms] for s in perms]
    n = len(perms)
    A = [row + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(G)]
    for c in range(n):
        piv = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        pv = A[c][c]
        A[c] = [x / pv for x in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    ident = perms.index(tuple(range(k)))
    # Wg(s) = (G^{-1})[s, id]
    return {p: A[i][n + ident] for i, p in enumerate(perms)}


def brute_unitary_expectation(xs, ys, xps, yps, N):
    """E prod U_{x_s y_s} conj(U_{x'_s y'_s}) by summing over all (sigma, tau) in S_k^2."""
    k = len(xs)
    if len(xps) != k:
        return Fraction(0)
    wgt = full_gram_weingarten(k, N)
    total = Fraction(0)
    for s in itertools.permutations(range(k)):
        if any(xs[t] != xps[s[t]] for t in range(k)):
            continue
        for t_ in itertools.permutations(range(k)):
            if any(ys[t] != yps[t_[t]] for t in range(k)):
                continue
            st_inv = tuple(s[q] for q in sorted(range(k), key=lambda x: t_[x]))
            total += wgt[st_inv]
    return total


def related_by_relabeling(v1, c1, v2, c2, d):
    """Direct check of the path equivalence: one vertex bijection and, per
    vertex, one color bijection on half-edges, applied position by position."""
    if len(c1) != len(c2):
        return False
    star = lambda i: i + d if i <= d else i - d
    tau = {}
    for x, y in zip(v1, v2):
        if tau.setdefault(x, y) != y:
            return False
    if len(set(tau.values())) != len(tau):
        return False
    half = {}
    for t in range(len(c1)):
        for x, i, c in ((v1[t], c1[t], c2[t]), (v1[t + 1], star(c1[t]), star(c2[t]))):
            if half.setdefault((x, i), c) != c:
                return False
    by_vertex = {}
    for (x, i), c in half.items():
        by_vertex.setdefault(x, []).append(c)
    return all(len(set(cs)) == len(cs) for cs in by_vertex.values())


def orbit_partition(items, d):
    """Union-find partition of (vertices, colors) pairs under the relabeling relation."""
    parent = list(range(len(items)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            if find(a) != find(b) and related_by_relabeling(*items[a], *items[b], d):
                parent[find(a)] = find(b)
    return [find(a) for a in range(len(items))]
