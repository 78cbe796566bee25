"""Degree reduction for polynomials in free unitaries.

A polynomial operator is ``P = sum_{g in B_l} a_g (x) u(g)`` for a group
homomorphism ``u``.  Halving replaces ``P`` (selfadjoint, norm attained at
the right end of the spectrum) by ``Q`` of half the degree with
``||P|| = ||Q||^2 - theta`` for *every* homomorphism; iterating reaches degree
one, where the linear machinery applies.

Words are reduced letter tuples; ``u(w) = u_{w[0]} u_{w[1]} ...``.
Coefficients may be rectangular: halving keeps only the nonzero column block
of each ``b_g``, which leaves every norm unchanged.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._linalg import hermitian_extreme, opnorm, psd_sqrt
from .freegroup import ball, inverse_letters, multiply_words
from .starops import CoefficientFamily


# ---------------------------------------------------------------------------
# polynomial operators


@dataclass
class PolynomialOperator:
    """``sum_g a_g (x) lambda(g)`` with ``a_g`` of shape ``(rows, cols)``."""

    d: int
    terms: dict  # reduced word -> ndarray
    shape: tuple = field(default=None)

    def __post_init__(self):
        terms = {}
        for w, a in self.terms.items():
            a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
            if self.shape is None:
                self.shape = a.shape
            if a.shape != tuple(self.shape):
                raise ValueError("all coefficients must share one shape")
            terms[tuple(int(x) for x in w)] = a
        if self.shape is None:
            raise ValueError("empty polynomial needs an explicit shape")
        self.shape = tuple(self.shape)
        self.terms = terms

    @property
    def degree(self) -> int:
        return max((len(w) for w, a in self.terms.items() if np.any(a)), default=0)

    @property
    def n(self) -> int:
        return self.shape[0] if self.shape[0] == self.shape[1] else max(self.shape)

    def coeff(self, w) -> np.ndarray:
        return self.terms.get(tuple(w), np.zeros(self.shape, dtype=np.complex128))

    @property
    def selfadjoint(self) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        return all(np.allclose(self.coeff(inverse_letters(w, self.d)), a.conj().T, atol=1e-12)
                   for w, a in self.terms.items())

    def evaluate(self, mats) -> np.ndarray:
        """Dense ``sum_g a_g (x) U(g)`` for ``mats = [U_1..U_{2d}]`` (``U_{i+d} = U_i^*``)."""
        N = mats[0].shape[0]
        r, c = self.shape
        out = np.zeros((r * N, c * N), dtype=np.complex128)
        cache = {(): np.eye(N, dtype=np.complex128)}
        for w in sorted(self.terms, key=len):
            if w not in cache:
                cache[w] = cache[w[:-1]] @ mats[w[-1] - 1] if w[:-1] in cache else _word_matrix(w, mats)
            out += np.kron(self.terms[w], cache[w])
        return out

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "shape": list(self.shape), "terms": [
            {"word": list(w), "re": a.real.tolist(), "im": a.imag.tolist()}
            for w, a in self.terms.items()]})

    @classmethod
    def from_json(cls, s: str) -> "PolynomialOperator":
        obj = json.loads(s)
        terms = {tuple(t["word"]): np.array(t["re"]) + 1j * np.array(t["im"]) for t in obj["terms"]}
        return cls(obj["d"], terms, tuple(obj["shape"]))

    @classmethod
    def from_family(cls, coeffs: CoefficientFamily) -> "PolynomialOperator":
        terms = {(): coeffs.a[0]}
        terms.update({(i,): coeffs.a[i] for i in range(1, 2 * coeffs.d + 1)})
        return cls(coeffs.d, terms)


def _word_matrix(w, mats):
    N = mats[0].shape[0]
    out = np.eye(N, dtype=np.complex128)
    for x in w:
        out = out @ mats[x - 1]
    return out


def random_polynomial(d: int, n: int, degree: int, seed=None, density: float = 1.0,
                      selfadjoint: bool = True) -> PolynomialOperator:
    """Gaussian coefficients on a random subset of ``B_degree`` (top layer nonempty)."""
    rng = np.random.default_rng(seed)
    words = ball(d, degree).words()
    terms = {}
    for w in words:
        if w and len(w) < degree and rng.random() > density:
            continue
        terms[w] = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2 * n)
    if selfadjoint:
        sym = {}
        for w, a in terms.items():
            wi = inverse_letters(w, d)
            b = terms.get(wi, np.zeros((n, n)))
            sym[w] = 0.5 * (a + b.conj().T)
            sym[wi] = sym[w].conj().T
        terms = sym
    return PolynomialOperator(d, terms, (n, n))


def selfadjointize(P: PolynomialOperator) -> PolynomialOperator:
    """``a_g -> [[0, a_g], [a_{g^-1}^*, 0]]``; the result is ``[[0, P], [P^*, 0]]``."""
    r, c = P.shape
    out = {}
    words = set(P.terms) | {inverse_letters(w, P.d) for w in P.terms}
    for w in words:
        m = np.zeros((r + c, r + c), dtype=np.complex128)
        m[:r, r:] = P.coeff(w)
        m[r:, :r] = P.coeff(inverse_letters(w, P.d)).conj().T
        out[w] = m
    return PolynomialOperator(P.d, out, (r + c, r + c))


def _norm(M: np.ndarray) -> float:
    """Spectral norm through the smaller Gram matrix."""
    if M.size == 0:
        return 0.0
    G = M.conj().T @ M if M.shape[1] <= M.shape[0] else M @ M.conj().T
    return math.sqrt(max(hermitian_extreme(0.5 * (G + G.conj().T), tol=1e-13), 0.0))


def norm_at(P: PolynomialOperator, mats) -> float:
    """``||P(U)||`` for finite unitaries."""
    return _norm(P.evaluate(mats))


# ---------------------------------------------------------------------------
# free evaluators


def compression(P: PolynomialOperator, L: int) -> sp.csr_matrix:
    """``P`` compressed to ``C^n (x) l^2(B_L)``; block ``(g, h)`` is ``a_{g h^-1}``."""
    bidx = ball(P.d, L)
    r, c = P.shape
    rows, cols, blocks = [], [], []
    words = bidx.words()
    for j, h in enumerate(words):
        for w, a in P.terms.items():
            g = multiply_words(w, h, P.d)
            if len(g) <= L and np.any(a):
                rows.append(bidx.index(g))
                cols.append(j)
                blocks.append(a)
    if not blocks:
        return sp.csr_matrix((bidx.size * r, bidx.size * c), dtype=np.complex128)
    blocks = np.array(blocks)
    rr, cc = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
    I = (np.array(rows)[:, None, None] * r + rr[None]).ravel()
    J = (np.array(cols)[:, None, None] * c + cc[None]).ravel()
    return sp.csr_matrix((blocks.ravel(), (I, J)), shape=(bidx.size * r, bidx.size * c))


def free_norm_lower(P: PolynomialOperator, L: int) -> float:
    """Norm of a ball compression; never exceeds ``||P_Gamma||``."""
    M = compression(P, L)
    if P.shape[0] == P.shape[1] and P.selfadjoint:
        return hermitian_extreme(M, tol=1e-10)
    return _norm(M.toarray())


def _convolve(X: dict, Y: dict, d: int) -> dict:
    out = {}
    for w, a in X.items():
        for v, b in Y.items():
            g = multiply_words(w, v, d)
            out[g] = out[g] + a @ b if g in out else a @ b
    return out


def free_norm_upper(P: PolynomialOperator, k: int = 2) -> float:
    """Haagerup-type bound from ``P^k`` (selfadjoint ``P``).

    ``||P||^k <= sum_j (j + 1) sqrt(sum_{|g| = j} ||(P^k)_g||^2)``.
    """
    if not P.selfadjoint:
        P = selfadjointize(P)
    X = dict(P.terms)
    for _ in range(k - 1):
        X = _convolve(X, P.terms, P.d)
    by_len = {}
    for w, a in X.items():
        by_len[len(w)] = by_len.get(len(w), 0.0) + opnorm(a) ** 2
    total = sum((j + 1) * math.sqrt(s) for j, s in by_len.items())
    return total ** (1.0 / k)


def free_norm_bracket(P: PolynomialOperator, L: int = 4, k: int = 2) -> tuple:
    return free_norm_lower(P, L), free_norm_upper(P, k)


# ---------------------------------------------------------------------------
# halving


@dataclass
class HalvingResult:
    """One halving step ``||P|| = ||Q||^2 - theta``."""

    Q: PolynomialOperator
    theta: float
    a_tilde_norm: float
    radius: int  # l / 2
    ball_size: int
    psd_min: float  # smallest eigenvalue of a~ + ||a~|| before repair

    @property
    def dim(self) -> int:
        """Size of the square block matrix ``b~``."""
        return self.Q.shape[0]


def halve_degree(P: PolynomialOperator, l: int | None = None) -> HalvingResult:
    """Halve an even degree ``l`` (``P`` selfadjoint with ``||P||`` its top eigenvalue).

    Raises ``ValueError`` for odd ``l``; pass an even ``l > degree`` to pad.
    """
    l = P.degree if l is None else l
    if l < P.degree:
        raise ValueError("l below the degree of P")
    if l < 2 or l % 2:
        raise ValueError("halving needs an even degree l >= 2 (pad odd degrees)")
    if not P.selfadjoint:
        raise ValueError("P must be selfadjoint (use selfadjointize first)")
    d, n = P.d, P.shape[0]
    h = l // 2
    bidx = ball(d, h)
    words = bidx.words()
    B = bidx.size
    inv = [inverse_letters(g, d) for g in words]
    rel = [[multiply_words(inv[i], words[j], d) for j in range(B)] for i in range(B)]
    count = {}
    for row in rel:
        for w in row:
            count[w] = count.get(w, 0) + 1
    at = np.zeros((B * n, B * n), dtype=np.complex128)
    for i in range(B):
        for j in range(B):
            w = rel[i][j]
            if w in P.terms:
                at[i * n:(i + 1) * n, j * n:(j + 1) * n] = P.terms[w] / count[w]
    at = 0.5 * (at + at.conj().T)
    w_eig = np.linalg.eigvalsh(at)
    nrm = float(max(abs(w_eig[0]), abs(w_eig[-1])))
    shifted = at + nrm * np.eye(B * n)
    psd_min = float(w_eig[0] + nrm)
    bt = psd_sqrt(shifted)
    o = 0  # the unit is the first ball element
    terms = {g: bt[:, g_i * n:(g_i + 1) * n].copy() for g_i, g in enumerate(words)}
    assert words[o] == ()
    Q = PolynomialOperator(d, terms, (B * n, n))
    return HalvingResult(Q, nrm * B, nrm, h, B, psd_min)


# ---------------------------------------------------------------------------
# chains


@dataclass
class LinearizationChain:
    """Steps ``Q_{k-1} -> Q_k`` with ``||Q_{k-1}|| = ||Q_k||^2 - theta_k``."""

    P: PolynomialOperator
    steps: list
    l: int

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def thetas(self) -> list:
        return [s.theta for s in self.steps]

    @property
    def final(self) -> PolynomialOperator:
        return self.steps[-1].Q if self.steps else self.P

    @property
    def dims(self) -> list:
        """Actual coefficient sizes along the chain (rectangular slices)."""
        return [self.P.shape] + [s.Q.shape for s in self.steps]

    @property
    def paper_dims(self) -> list:
        """Square-embedding bookkeeping ``n_k = n_{k-1} * 2 |B_{2^{m-k}}|``."""
        out = [self.P.shape[0]]
        for s in self.steps:
            out.append(out[-1] * 2 * s.ball_size)
        return out

    def recombine(self, final_norm: float) -> float:
        """Map ``||Q_m||`` back to ``||P||`` through the chain."""
        v = final_norm
        for s in reversed(self.steps):
            v = v * v - s.theta
        return v

    def final_family(self) -> CoefficientFamily:
        """Degree-one coefficients padded to square ``(a_0, a_1, ..., a_{2d})``."""
        Q = self.final
        r, c = Q.shape
        D = max(r, c)
        a = np.zeros((2 * Q.d + 1, D, D), dtype=np.complex128)
        for i in range(2 * Q.d + 1):
            w = () if i == 0 else (i,)
            a[i, :r, :c] = Q.coeff(w)
        return CoefficientFamily(a)


def linearize(P: PolynomialOperator) -> LinearizationChain:
    """Iterate selfadjointize + halve ``ceil(log2 l)`` times down to degree one.

    Odd intermediate degrees are padded with a zero top layer.
    """
    l = max(P.degree, 1)
    m = math.ceil(math.log2(l)) if l > 1 else 0
    steps = []
    Q = P
    for k in range(1, m + 1):
        target = 2 ** (m - k + 1)
        res = halve_degree(selfadjointize(Q), target)
        steps.append(res)
        Q = res.Q
    return LinearizationChain(P, steps, l)


def chain_residuals(chain: LinearizationChain, mats) -> list:
    """Per-step ``| ||Q_{k-1}(U)|| - (||Q_k(U)||^2 - theta_k) |`` and the end-to-end gap."""
    norms = [norm_at(chain.P, mats)] + [norm_at(s.Q, mats) for s in chain.steps]
    per = [abs(norms[k] - (norms[k + 1] ** 2 - s.theta)) for k, s in enumerate(chain.steps)]
    return per + [abs(norms[0] - chain.recombine(norms[-1]))]


# ---------------------------------------------------------------------------
# transfer of norm bounds


def transfer_factor(l: int, d: int) -> float:
    return 4 * l * l * (2 * d) ** (2 * l)


def transfer_bounds(chain_or_l, eps: float, d: int | None = None) -> dict:
    """Propagate a relative error ``eps`` at degree one back to degree ``l``.

    Uses ``eps_{k-1} = 4 eps_k (2d)^{2^{m-k}}`` and refuses when
    ``eps > (2d)^{-l} l^{-2}``.
    """
    if isinstance(chain_or_l, LinearizationChain):
        l, d = chain_or_l.l, chain_or_l.P.d
    else:
        l = int(chain_or_l)
    if l < 2:
        raise ValueError("need l >= 2")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    guard = (2 * d) ** (-l) / l ** 2
    if eps > guard:
        raise ValueError(f"eps={eps} exceeds the validity guard {guard:.3e}")
    m = math.ceil(math.log2(l))
    e = eps
    trail = [e]
    for k in range(m, 0, -1):
        e = 4 * e * (2 * d) ** (2 ** (m - k))
        trail.append(e)
    return {"eps0": e, "trail": trail, "factor": transfer_factor(l, d),
            "theorem_bound": transfer_factor(l, d) * eps, "guard": guard}


# ---------------------------------------------------------------------------
# spectrum probe


def quadratic(P: PolynomialOperator, x: float, y: float, theta: float) -> PolynomialOperator:
    """``f(P)`` for ``f(s) = theta + (y - s)(s - x) = theta - x y + (x + y) s - s^2``."""
    if not P.selfadjoint:
        raise ValueError("P must be selfadjoint")
    sq = _convolve(P.terms, P.terms, P.d)
    n = P.shape[0]
    out = {w: -a for w, a in sq.items()}
    for w, a in P.terms.items():
        out[w] = out.get(w, 0) + (x + y) * a
    out[()] = out.get((), 0) + (theta - x * y) * np.eye(n)
    return PolynomialOperator(P.d, out, (n, n))


@dataclass
class SpectrumProbe:
    x: float
    y: float
    c: float
    theta: float
    q_norm: float  # ||Q|| (finite) or an upper bound on ||Q_Gamma||
    q_lower: float  # lower bound on ||Q|| (equal to q_norm for finite input)
    q_top: float  # top eigenvalue of Q when available (nan otherwise)
    gap: tuple | None  # certified spectrum-free open interval inside (x, y)
    meets: bool  # spectrum certainly meets (x, y)
    dist: float | None  # for x == y: distance from x to the spectrum

    @property
    def eps(self) -> float:
        return self.q_norm / self.theta - 1.0

    @property
    def eta(self) -> float:
        """Shift ``4 eps c^2 / (y - x)`` in the form of the gap statement."""
        if self.y <= self.x:
            return math.inf
        return 4 * max(self.eps, 0.0) * self.c ** 2 / (self.y - self.x)


def quadratic_spectrum_probe(P: PolynomialOperator, x: float, y: float, mats=None,
                             c: float | None = None, L: int = 5, k: int = 2) -> SpectrumProbe:
    """Certify spectral gaps of selfadjoint ``P`` inside ``[x, y]`` from norms of ``f(P)``.

    With ``c >= ||P||`` and ``theta = 2 c^2`` one has ``|f| <= theta`` on
    ``[-c, c]`` outside ``(x, y)``, while ``f > theta`` inside.  Hence every
    spectral point ``s`` satisfies ``(y - s)(s - x) <= ||f(P)|| - theta``.
    ``mats`` selects a finite evaluation; otherwise the free operator is
    bracketed by a ball compression (radius ``L``) and a power-``k`` bound.
    """
    if x > y:
        raise ValueError("need x <= y")
    if c is None:
        c = free_norm_upper(P, k)
        if mats is not None:
            c = max(c, norm_at(P, mats))
    c = max(c, abs(x), abs(y))
    theta = 2 * c * c
    Q = quadratic(P, x, y, theta)
    top = math.nan
    if mats is not None:
        M = Q.evaluate(mats)
        w = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
        hi = lo = float(max(abs(w[0]), abs(w[-1])))
        top = float(w[-1])
    else:
        lo = free_norm_lower(Q, L)
        hi = free_norm_upper(Q, k)
    slack = hi - theta
    half = 0.5 * (y - x)
    gap = None
    if slack < half * half:
        r = math.sqrt(half * half - max(slack, 0.0))
        gap = (0.5 * (x + y) - r, 0.5 * (x + y) + r)
    dist = None
    if x == y and not math.isnan(top):
        dist = math.sqrt(max(theta - top, 0.0))
    return SpectrumProbe(x, y, c, theta, hi, lo, top, gap, lo > theta * (1 + 1e-12), dist)
