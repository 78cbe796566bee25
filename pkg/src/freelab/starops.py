"""The free operator A = a_0 x 1 + sum_i a_i x lambda(g_i) on H_1 x l^2(F_d).

Entries of powers are computed exactly by dynamic programming on balls; norms
are bracketed between compressions onto finite-dimensional subspaces (lower
bounds) and Haagerup-type inequalities applied to high powers (upper bounds).

Coefficients are stored as a ``(2d + 1, n, n)`` complex array ``a`` with
``a[0]`` the constant term and ``a[i]`` attached to the generator ``g_i``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from . import kernels
from ._linalg import (block_opnorms, block_tridiagonal_extreme, hermitian_extreme,
                      opnorm)
from .freegroup import BallIndex, ball, ball_size, multiply_words, star

SA_TOL = 1e-12


# ---------------------------------------------------------------------------
# coefficient families


@dataclass(frozen=True, eq=False)
class CoefficientFamily:
    """Matrix coefficients ``(a_0, ..., a_{2d})``.

    Parameters
    ----------
    a : ndarray, shape (2d + 1, n, n)
    witness : optional pair ``(b, u)`` of arrays with ``a[i] = kron(b[i], u[i])``
        for ``i = 1..2d`` (index 0 unused), certifying unitary-tensor structure.
    """

    a: np.ndarray
    witness: tuple | None = None
    name: str = ""

    def __post_init__(self):
        a = np.array(self.a, dtype=np.complex128)
        if a.ndim != 3 or a.shape[1] != a.shape[2] or a.shape[0] % 2 != 1 or a.shape[0] < 3:
            raise ValueError("coefficients must have shape (2d+1, n, n) with d >= 1")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def d(self) -> int:
        return (self.a.shape[0] - 1) // 2

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def selfadjoint(self) -> bool:
        """Whether ``a_0* = a_0`` and ``a_i* = a_{i*}`` hold to 1e-12."""
        a = self.a
        if np.max(np.abs(a[0] - a[0].conj().T)) > SA_TOL:
            return False
        for i in range(1, 2 * self.d + 1):
            if np.max(np.abs(a[i].conj().T - a[star(i, self.d)])) > SA_TOL:
                return False
        return True

    @property
    def radial(self) -> bool:
        """All generator coefficients equal (``a_1 = ... = a_{2d}``)."""
        return bool(np.all(self.a[1:] == self.a[1]))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.a)

    def norm_sum(self) -> float:
        """``sum_i ||a_i||`` over ``i = 0..2d``."""
        return float(sum(opnorm(x) for x in self.a))

    def scaled(self, s: complex) -> "CoefficientFamily":
        return CoefficientFamily(self.a * s, name=self.name)

    def shifted(self, c: complex) -> "CoefficientFamily":
        a = self.a.copy()
        a[0] = a[0] + c * np.eye(self.n)
        return CoefficientFamily(a, name=self.name)

    # structural certificates

    def check_bistochastic(self, f: np.ndarray | None = None, tol: float = 1e-10) -> bool:
        """Common fixed unit vector with ``a_i f = a_i* f = ||a_i|| f``."""
        if f is None:
            f = np.ones(self.n) / math.sqrt(self.n)
        f = np.asarray(f, dtype=np.complex128)
        f = f / np.linalg.norm(f)
        for x in self.a:
            nx = opnorm(x)
            if np.max(np.abs(x @ f - nx * f)) > tol or np.max(np.abs(x.conj().T @ f - nx * f)) > tol:
                return False
        return True

    def check_unitary_tensor(self, tol: float = 1e-10) -> bool:
        """Validate the supplied ``(b, u)`` witness."""
        if self.witness is None:
            return False
        b, u = self.witness
        for i in range(1, 2 * self.d + 1):
            ui = np.asarray(u[i])
            if np.max(np.abs(ui @ ui.conj().T - np.eye(ui.shape[0]))) > tol:
                return False
            if np.max(np.abs(np.kron(b[i], ui) - self.a[i])) > tol:
                return False
        return True

    def flags(self) -> dict:
        return {
            "selfadjoint": self.selfadjoint,
            "bistochastic": self.check_bistochastic(),
            "unitary_tensor": self.check_unitary_tensor(),
        }

    # serialization

    def to_dict(self) -> dict:
        mats = [[[[float(z.real), float(z.imag)] for z in row] for row in m] for m in self.a]
        return {"d": self.d, "n": self.n, "matrices": mats, "flags": self.flags()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "CoefficientFamily":
        arr = np.array(obj["matrices"], dtype=float)
        a = arr[..., 0] + 1j * arr[..., 1]
        fam = cls(a)
        if fam.d != obj["d"] or fam.n != obj["n"]:
            raise ValueError("declared (d, n) do not match the matrices")
        flags = obj.get("flags", {})
        if flags.get("selfadjoint") and not fam.selfadjoint:
            raise ValueError("family flagged selfadjoint but the symmetry check fails")
        return fam

    @classmethod
    def from_json(cls, text: str) -> "CoefficientFamily":
        return cls.from_dict(json.loads(text))


def _scalar_family(d: int, a0: complex, ai: complex) -> np.ndarray:
    a = np.full((2 * d + 1, 1, 1), ai, dtype=np.complex128)
    a[0] = a0
    return a


def kesten(d: int) -> CoefficientFamily:
    """Unit scalar coefficients: the adjacency operator of the 2d-regular tree."""
    return CoefficientFamily(_scalar_family(d, 0.0, 1.0), name=f"kesten({d})")


def zeros(d: int, n: int = 1) -> CoefficientFamily:
    return CoefficientFamily(np.zeros((2 * d + 1, n, n)), name="zero")


def random_selfadjoint(d: int, n: int, seed=None, scale: float = 1.0) -> CoefficientFamily:
    """Gaussian coefficients satisfying the symmetry condition."""
    rng = np.random.default_rng(seed)
    a = np.zeros((2 * d + 1, n, n), dtype=np.complex128)
    g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2 * n)
    a[0] = scale * (g + g.conj().T) / 2
    for i in range(1, d + 1):
        g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2 * n)
        a[i] = scale * g
        a[i + d] = scale * g.conj().T
    return CoefficientFamily(a, name=f"random-selfadjoint({n})")


def random_general(d: int, n: int, seed=None) -> CoefficientFamily:
    """Gaussian coefficients without any symmetry."""
    rng = np.random.default_rng(seed)
    a = (rng.standard_normal((2 * d + 1, n, n)) + 1j * rng.standard_normal((2 * d + 1, n, n)))
    return CoefficientFamily(a / math.sqrt(2 * n), name=f"random-general({n})")


def bistochastic(d: int, n: int, seed=None, terms: int = 2) -> CoefficientFamily:
    """Nonnegative mixtures of permutation matrices; ``a_{i*} = a_i^T``."""
    rng = np.random.default_rng(seed)
    a = np.zeros((2 * d + 1, n, n), dtype=np.complex128)
    eye = np.eye(n)
    for i in range(d + 1):
        w = rng.uniform(0.2, 1.0, size=terms)
        m = sum(wt * eye[rng.permutation(n)] for wt in w)
        if i == 0:
            m = (m + m.T) / 2
            a[0] = m
        else:
            a[i] = m
            a[i + d] = m.T
    return CoefficientFamily(a, name=f"bistochastic({n})")


def unitary_tensor(d: int, m: int, n: int, seed=None) -> CoefficientFamily:
    """Coefficients ``b_i x u_i`` with Haar unitary ``u_i``; witness attached."""
    from .models import haar_unitary

    rng = np.random.default_rng(seed)
    b = np.zeros((2 * d + 1, m, m), dtype=np.complex128)
    u = np.zeros((2 * d + 1, n, n), dtype=np.complex128)
    u[0] = np.eye(n)
    for i in range(1, d + 1):
        g = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / math.sqrt(2 * m)
        ui = haar_unitary(n, rng)
        b[i], u[i] = g, ui
        b[i + d], u[i + d] = g.conj().T, ui.conj().T
    a = np.zeros((2 * d + 1, m * n, m * n), dtype=np.complex128)
    for i in range(1, 2 * d + 1):
        a[i] = np.kron(b[i], u[i])
    return CoefficientFamily(a, witness=(b, u), name=f"unitary-tensor({m},{n})")


def selfadjointize(coeffs: CoefficientFamily) -> CoefficientFamily:
    """2x2 doubling ``a_i -> [[0, a_i], [a_{i*}^*, 0]]`` (with ``0* = 0``).

    The doubled operator is ``[[0, A], [A^*, 0]]``, selfadjoint with the same
    norm as ``A``.
    """
    d, n = coeffs.d, coeffs.n
    a = coeffs.a
    out = np.zeros((2 * d + 1, 2 * n, 2 * n), dtype=np.complex128)
    for i in range(2 * d + 1):
        j = 0 if i == 0 else star(i, d)
        out[i, :n, n:] = a[i]
        out[i, n:, :n] = a[j].conj().T
    return CoefficientFamily(out, name=coeffs.name)


def hermitian_form(coeffs: CoefficientFamily) -> CoefficientFamily:
    """The family itself when selfadjoint, its doubling otherwise."""
    return coeffs if coeffs.selfadjoint else selfadjointize(coeffs)


# ---------------------------------------------------------------------------
# exact entries of powers


def power_entries(coeffs: CoefficientFamily, ell: int, bidx: BallIndex | None = None,
                  backend=None):
    """All entries ``(A^ell)_{g, o}`` for ``g`` in ``B_ell``.

    Returns
    -------
    bidx : BallIndex
        The ball used (radius at least ``ell``).
    E : ndarray, shape (|B_ell|, n, n)
    """
    if ell < 0:
        raise ValueError("ell must be >= 0")
    d, n = coeffs.d, coeffs.n
    if bidx is None or bidx.L < ell:
        bidx = ball(d, ell)
    E = np.eye(n, dtype=np.complex128)[None]
    for k in range(1, ell + 1):
        E = kernels.transfer_step(E, bidx.left, coeffs.a, bidx.star_table,
                                  ball_size(d, k - 1), ball_size(d, k), backend=backend)
    return bidx, E


def power_entry(coeffs: CoefficientFamily, ell: int, g: Sequence[int]) -> np.ndarray:
    """``(A^ell)_{g, o}``; zero when ``|g| > ell``."""
    g = tuple(g)
    if len(g) > ell:
        return np.zeros((coeffs.n, coeffs.n), dtype=np.complex128)
    bidx, E = power_entries(coeffs, ell)
    return E[bidx.index(g)].copy()


def free_moment(coeffs: CoefficientFamily, ell: int) -> complex:
    """``tau(A^ell)`` with the normalized trace on the coefficients."""
    _, E = power_entries(coeffs, ell)
    return complex(np.trace(E[0]) / coeffs.n)


def nb_component(coeffs: CoefficientFamily, ell: int, m: int) -> dict:
    """``{g: (A^ell)_{g, o}}`` for ``g`` in the sphere ``S_m``."""
    if m > ell:
        return {}
    bidx, E = power_entries(coeffs, ell)
    sl = bidx.sphere_slice(m)
    return {bidx.word(k): E[k].copy() for k in range(sl.start, sl.stop)}


# ---------------------------------------------------------------------------
# truncated ball operator


class BallOperator:
    """Compression of A onto ``C^n x l^2(B_L)``, stored as a sparse matrix.

    Row/column ``g * n + r`` corresponds to ball element ``g`` and coefficient
    coordinate ``r``; block ``(g, h)`` equals ``a_i`` when ``g = g_i h`` and
    ``a_0`` on the diagonal.
    """

    def __init__(self, coeffs: CoefficientFamily, L: int, bidx: BallIndex | None = None):
        self.coeffs = coeffs
        self.L = L
        self.ball = bidx if bidx is not None and bidx.L == L else ball(coeffs.d, L)
        size = self.ball.size
        mat = None
        for i in range(2 * coeffs.d + 1):
            if not np.any(coeffs.a[i]):
                continue
            cols = np.nonzero(self.ball.left[:, i] >= 0)[0]
            rows = self.ball.left[cols, i]
            P = sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(size, size))
            term = sp.kron(P, sp.csr_matrix(coeffs.a[i]), format="csr")
            mat = term if mat is None else mat + term
        if mat is None:
            mat = sp.csr_matrix((size * coeffs.n, size * coeffs.n), dtype=np.complex128)
        self.matrix = mat.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, g: Sequence[int], h: Sequence[int]) -> np.ndarray:
        n = self.coeffs.n
        i, j = self.ball.index(g), self.ball.index(h)
        return self.matrix[i * n:(i + 1) * n, j * n:(j + 1) * n].toarray()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def power_column(self, ell: int) -> np.ndarray:
        """Blocks ``(M^ell)_{g, o}`` by repeated sparse products (radius >= ell)."""
        n = self.coeffs.n
        X = np.zeros((self.matrix.shape[0], n), dtype=np.complex128)
        X[:n] = np.eye(n)
        for _ in range(ell):
            X = self.matrix @ X
        return X.reshape(self.ball.size, n, n)


def truncated_norm_lower(coeffs: CoefficientFamily, L: int, tol: float = 1e-9, seed: int = 0) -> float:
    """Norm of the compression of A onto the ball of radius ``L``.

    This never exceeds ``||A||``.  Non-selfadjoint families are doubled first.
    """
    if coeffs.is_zero:
        return 0.0
    op = hermitian_form(coeffs)
    M = BallOperator(op, L).matrix
    return hermitian_extreme(M, tol=tol, seed=seed)


# ---------------------------------------------------------------------------
# radial fast path (a_1 = ... = a_{2d})


def _radial_step(R, a0, c, d):
    """One transfer step on radial block profiles ``R[m]``, m = 0..K."""
    q = 2 * d - 1
    up = np.zeros_like(R)
    up[1:] = R[:-1]                    # from the parent sphere
    down = np.zeros_like(R)
    down[:-1] = R[1:]                  # from the child spheres
    down[1:] *= q
    down[0] *= 2 * d
    return np.matmul(a0, R) + np.matmul(c, up + down)


def radial_power_profile(coeffs: CoefficientFamily, k: int):
    """Radial profile of ``A^k``: ``(A^k)_{g, o} = exp(logscale) * R[|g|]``.

    Only valid when all generator coefficients are equal.
    """
    if not coeffs.radial:
        raise ValueError("radial profile needs a_1 = ... = a_{2d}")
    n = coeffs.n
    a0, c = coeffs.a[0], coeffs.a[1]
    R = np.zeros((k + 2, n, n), dtype=np.complex128)
    R[0] = np.eye(n)
    logscale = 0.0
    for _ in range(k):
        R = _radial_step(R, a0, c, coeffs.d)
        mx = float(np.max(np.abs(R)))
        if mx == 0.0:
            return R[:k + 1], -np.inf
        R /= mx
        logscale += math.log(mx)
    return R[:k + 1], logscale


def _log_sphere_sizes(d: int, K: int) -> np.ndarray:
    m = np.arange(K + 1)
    out = np.log(2 * d) + (m - 1) * np.log(2 * d - 1) if d > 1 else np.full(K + 1, np.log(2.0))
    out = np.asarray(out, dtype=float)
    out[0] = 0.0
    return out


def radial_norm_lower(coeffs: CoefficientFamily, depth: int) -> float:
    """Compression of A onto radial vectors ``v x 1_{S_m}``, ``m <= depth``.

    On this subspace A acts as a block tridiagonal matrix with diagonal
    ``a_0`` and off-diagonal ``c * sqrt(2d)`` (first) and ``c * sqrt(2d - 1)``.
    """
    if coeffs.is_zero:
        return 0.0
    op = hermitian_form(coeffs)
    if not op.radial:
        raise ValueError("radial compression needs a_1 = ... = a_{2d}")
    d, n = op.d, op.n
    diag = np.broadcast_to(op.a[0], (depth + 1, n, n)).copy()
    w = np.full(depth, math.sqrt(2 * d - 1))
    if depth:
        w[0] = math.sqrt(2 * d)
    off = w[:, None, None] * op.a[1][None]
    return block_tridiagonal_extreme(diag, off)


# ---------------------------------------------------------------------------
# Schatten norms and Haagerup bounds


def schatten_norm_star(coeffs: CoefficientFamily, p: int, fast: bool = True) -> float:
    """Normalized Schatten norm ``tau(|A|^p)^{1/p}`` for even ``p``.

    Uses ``tau((A A*)^{p/2}) = sum_g tr(E(g) E(g)*) / n'`` with ``E`` the
    entries of the ``p/2``-th power of the selfadjoint form.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    if coeffs.is_zero:
        return 0.0
    op = hermitian_form(coeffs)
    k = p // 2
    if fast and op.radial:
        R, ls = radial_power_profile(op, k)
        fro2 = np.sum(np.abs(R) ** 2, axis=(1, 2))
        with np.errstate(divide="ignore"):
            terms = _log_sphere_sizes(op.d, k) + np.log(fro2)
        logval = logsumexp(terms) + 2 * ls - math.log(op.n)
        return float(math.exp(logval / p))
    _, E = power_entries(op, k)
    val = float(np.sum(np.abs(E) ** 2)) / op.n
    return val ** (1.0 / p)


def haagerup_upper(coeffs: CoefficientFamily, p: int, fast: bool = True) -> float:
    """Certified upper bound on ``||A||`` from the ``p/2``-th power.

    With ``k = p / 2`` and ``E = (A^k)_{., o}`` for the selfadjoint form,

        ||A||^k <= sum_{l=0}^{k} (l + 1) * sqrt(sum_{|g| = l} ||E(g)||^2),

    which is the operator-coefficient Haagerup inequality applied sphere by
    sphere.  When all generator coefficients coincide the entries depend only
    on ``|g|`` and a radial recursion is used; ``fast=False`` disables it.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    if coeffs.is_zero:
        return 0.0
    op = hermitian_form(coeffs)
    k = p // 2
    if fast and op.radial:
        R, ls = radial_power_profile(op, k)
        nrm = block_opnorms(R)
        with np.errstate(divide="ignore"):
            terms = np.log(np.arange(1, k + 2)) + 0.5 * _log_sphere_sizes(op.d, k) + np.log(nrm)
        return float(math.exp((logsumexp(terms) + ls) / k))
    bidx, E = power_entries(op, k)
    nrm2 = block_opnorms(E) ** 2
    total = 0.0
    for l in range(k + 1):
        total += (l + 1) * math.sqrt(float(np.sum(nrm2[bidx.sphere_slice(l)])))
    return total ** (1.0 / k)


@dataclass
class Budget:
    """Resource limits for :func:`norm_bracket`."""

    max_ball: int = 1_500_000
    max_dim: int = 400_000
    max_power: int = 1024
    radial_depth: int = 4000
    seconds: float = 60.0


@dataclass
class NormBracket:
    lower: float
    upper: float
    achieved: bool
    history: list = field(default_factory=list)

    def __iter__(self):
        yield self.lower
        yield self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.upper + self.lower)


def norm_bracket(coeffs: CoefficientFamily, tol: float = 0.05, budget: Budget | None = None) -> NormBracket:
    """Interval ``[lower, upper]`` containing ``||A||``.

    Lower bounds come from compressions (radial when the generator
    coefficients coincide, ball truncations otherwise); upper bounds from
    :func:`haagerup_upper` with doubling powers.  Stops as soon as the width
    is at most ``tol`` or the budget is exhausted (``achieved=False``).
    """
    budget = budget or Budget()
    if coeffs.is_zero:
        return NormBracket(0.0, 0.0, True)
    op = hermitian_form(coeffs)
    t0 = time.monotonic()
    hist = []
    lower, upper = 0.0, math.inf
    if op.radial:
        lower = radial_norm_lower(op, budget.radial_depth)
        hist.append(("radial_lower", budget.radial_depth, lower))
        k = 1
        while k <= budget.max_power:
            upper = min(upper, haagerup_upper(op, 2 * k))
            hist.append(("haagerup", 2 * k, upper))
            if upper - lower <= tol or time.monotonic() - t0 > budget.seconds:
                break
            k *= 2
        return NormBracket(lower, upper, upper - lower <= tol, hist)

    d, n = op.d, op.n
    L, k = 0, 1
    grow_L, grow_k = True, True
    while grow_L or grow_k:
        if grow_L:
            if ball_size(d, L) * n <= budget.max_dim and ball_size(d, L) <= budget.max_ball:
                lower = max(lower, truncated_norm_lower(op, L))
                hist.append(("truncated", L, lower))
                L += 1
            else:
                grow_L = False
        if grow_k:
            if ball_size(d, k) <= budget.max_ball and 2 * k <= budget.max_power:
                upper = min(upper, haagerup_upper(op, 2 * k))
                hist.append(("haagerup", 2 * k, upper))
                k += 1
            else:
                grow_k = False
        if upper - lower <= tol or time.monotonic() - t0 > budget.seconds:
            break
    return NormBracket(lower, upper, upper - lower <= tol, hist)


# ---------------------------------------------------------------------------
# corner operators C^{(k,i)} and the last-passage decomposition


def _restricted_walk(coeffs: CoefficientFamily, steps: int, start: Sequence[int], bidx: BallIndex):
    """Entries of ``(A^o)^t`` in the column of ``start`` for ``t = 0..steps``.

    ``A^o`` is A restricted to F_d minus the unit.  Returns a list of arrays
    of shape ``(|B|, n, n)``.
    """
    n = coeffs.n
    E = np.zeros((bidx.size, n, n), dtype=np.complex128)
    E[bidx.index(start)] = np.eye(n)
    out = [E]
    for _ in range(steps):
        E = kernels.transfer_step(E, bidx.left, coeffs.a, bidx.star_table, bidx.size, bidx.size,
                                  kill_origin=True)
        out.append(E)
    return out


def c_entries_all(coeffs: CoefficientFamily, k: int, i: int, bidx: BallIndex | None = None):
    """``(C^{(k,i)})_{g, o}`` for all ``g`` in ``B_k`` as a ``(|B_k|, n, n)`` array."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if bidx is None or bidx.L < k:
        bidx = ball(coeffs.d, k)
    walk = _restricted_walk(coeffs, k - 1, (i,), bidx)
    return bidx, np.matmul(walk[-1], coeffs.a[i])


def c_entry(coeffs: CoefficientFamily, k: int, i: int, g: Sequence[int]) -> np.ndarray:
    """Entry ``(C^{(k,i)})_{g, o} = ((A^o)^{k-1})_{g, g_i} a_i``."""
    g = tuple(g)
    n = coeffs.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if not g or g[-1] != i or len(g) > k:
        return np.zeros((n, n), dtype=np.complex128)
    bidx, C = c_entries_all(coeffs, k, i)
    return C[bidx.index(g)].copy()


def _split_word(g: tuple, cut_points: Sequence[int]):
    """Split ``g`` at the given positions, returned right to left (h_0 first)."""
    cuts = sorted(set(int(c) for c in cut_points))
    if any(c <= 0 or c >= len(g) for c in cuts):
        raise ValueError("cut points must lie strictly inside the word")
    bounds = [0] + cuts + [len(g)]
    pieces = [g[bounds[t]:bounds[t + 1]] for t in range(len(bounds) - 1)]
    return pieces[::-1]


def path_decomposition_check(coeffs: CoefficientFamily, k: int, g: Sequence[int],
                             cut_points: Sequence[int] = ()) -> float:
    """Residual of the last-passage decomposition of ``(A^k)_{g, o}``.

    ``g = h_r ... h_1 h_0`` is split at ``cut_points`` (positions in the
    letter tuple).  The right-hand side sums
    ``C^{(k_r, i_r)}_{h_r} ... C^{(k_1, i_1)}_{h_1} (A^{k_0})_{h_0}`` over
    ``k_0 >= 0``, ``k_j >= 1``, ``sum k_j = k``, where ``i_j`` is the first
    applied letter of ``h_j``.
    """
    g = tuple(g)
    n = coeffs.n
    if not g:
        pieces = [()]
    else:
        pieces = _split_word(g, cut_points)
    h0 = pieces[0]
    bidx = ball(coeffs.d, max(k, 1))
    # (A^t)_{h0, o} for t = 0..k
    S = np.zeros((k + 1, n, n), dtype=np.complex128)
    E = np.zeros((bidx.size, n, n), dtype=np.complex128)
    E[0] = np.eye(n)
    j0 = bidx.index(h0) if len(h0) <= bidx.L else None
    for t in range(k + 1):
        if t:
            E = kernels.transfer_step(E, bidx.left, coeffs.a, bidx.star_table, bidx.size, bidx.size)
        if j0 is not None:
            S[t] = E[j0]
    for h in pieces[1:]:
        i = h[-1]
        Cvals = np.zeros((k + 1, n, n), dtype=np.complex128)
        if len(h) <= k:
            walk = _restricted_walk(coeffs, k - 1, (i,), bidx)
            jh = bidx.index(h)
            for s in range(1, k + 1):
                Cvals[s] = walk[s - 1][jh] @ coeffs.a[i]
        newS = np.zeros_like(S)
        for t in range(k + 1):
            for s in range(1, t + 1):
                newS[t] += Cvals[s] @ S[t - s]
        S = newS
    lhs = power_entry(coeffs, k, g)
    return float(np.max(np.abs(lhs - S[k]), initial=0.0))


def c_norm_bound_check(coeffs: CoefficientFamily, k: int, i: int, radius: int = 2,
                       upper: float | None = None, slack: float = 1e-9) -> bool:
    """Check the norm bounds on the corner operator ``C^{(k,i)}``.

    Verifies ``||C_{g,o}|| <= U^k`` for all ``g``, ``||(C* C)_{o,o}|| <= U^{2k}``
    and that the compression of ``C`` to the ball of radius ``radius`` has
    norm at most ``k U^k``, where ``U`` is a certified upper bound on
    ``||A||`` (from :func:`norm_bracket` unless supplied).
    """
    if not coeffs.selfadjoint:
        raise ValueError("the corner bounds assume the symmetry condition")
    if upper is None:
        upper = norm_bracket(coeffs, tol=0.05, budget=Budget(max_ball=200_000, max_dim=20_000,
                                                            seconds=10.0)).upper
    if coeffs.is_zero:
        return True
    bidx, C = c_entries_all(coeffs, k, i)
    nrm = block_opnorms(C)
    ok = bool(np.all(nrm <= upper ** k * (1 + slack) + slack))
    cc = np.einsum("gji,gjk->ik", C.conj(), C)
    ok &= opnorm(cc) <= upper ** (2 * k) * (1 + slack) + slack
    # compression of the convolution operator C_{g,h} = c(g h^{-1})
    inner = ball(coeffs.d, radius)
    words = inner.words()
    n = coeffs.n
    M = np.zeros((inner.size * n, inner.size * n), dtype=np.complex128)
    d = coeffs.d
    for r, gw in enumerate(words):
        for s, hw in enumerate(words):
            w = multiply_words(gw, tuple(star(x, d) for x in reversed(hw)), d)
            if len(w) <= k:
                M[r * n:(r + 1) * n, s * n:(s + 1) * n] = C[bidx.index(w)]
    ok &= opnorm(M) <= k * upper ** k * (1 + slack) + slack
    return bool(ok)


# ---------------------------------------------------------------------------
# several commuting legs: F_d^k acting on l^2(F_d)^{x k}


def _leg_forms(legs: Sequence[CoefficientFamily]):
    """Selfadjoint forms of all legs and the combined constant term."""
    if not legs:
        raise ValueError("need at least one leg")
    d, n = legs[0].d, legs[0].n
    if any(c.d != d or c.n != n for c in legs):
        raise ValueError("legs must share d and n")
    sa = all(c.selfadjoint for c in legs)
    forms = list(legs) if sa else [selfadjointize(c) for c in legs]
    a0 = sum(f.a[0] for f in forms)
    return forms, a0


def tensor_power_entries(legs: Sequence[CoefficientFamily], q: int):
    """Entries ``(A^q)_{(g_1..g_k), o}`` on the product of radius-``q`` balls.

    ``A = sum_j a_{0,j} + sum_{j, i} a_{i,j} x lambda_j(g_i)`` with the
    selfadjoint forms of the legs.  Returns ``(ball, E)`` with ``E`` of shape
    ``(|B_q|,) * k + (n, n)``.
    """
    forms, a0 = _leg_forms(legs)
    k, d, n = len(forms), forms[0].d, forms[0].n
    bidx = ball(d, q)
    b = bidx.size
    E = np.zeros((b,) * k + (n, n), dtype=np.complex128)
    E[(0,) * k] = np.eye(n)
    for _ in range(q):
        out = np.matmul(a0, E)
        for j, f in enumerate(forms):
            for i in range(1, 2 * d + 1):
                if not np.any(f.a[i]):
                    continue
                idx = bidx.left[:, bidx.star_table[i]].copy()
                pad = np.concatenate([E, np.zeros_like(np.take(E, [0], axis=j))], axis=j)
                idx[idx < 0] = b
                out += np.matmul(f.a[i], np.take(pad, idx, axis=j))
        E = out
    return bidx, E


def _tensor_radial_profile(forms, a0, q):
    k, d, n = len(forms), forms[0].d, forms[0].n
    R = np.zeros((q + 2,) * k + (n, n), dtype=np.complex128)
    R[(0,) * k] = np.eye(n)
    logscale = 0.0
    for _ in range(q):
        out = np.matmul(a0, R)
        for j, f in enumerate(forms):
            Rj = np.moveaxis(R, j, 0)
            up = np.zeros_like(Rj)
            up[1:] = Rj[:-1]
            down = np.zeros_like(Rj)
            down[:-1] = Rj[1:]
            down[1:] *= 2 * d - 1
            down[0] *= 2 * d
            out += np.moveaxis(np.matmul(f.a[1], up + down), 0, j)
        R = out
        mx = float(np.max(np.abs(R)))
        if mx == 0.0:
            return R, -np.inf
        R /= mx
        logscale += math.log(mx)
    return R[(slice(0, q + 1),) * k], logscale


def tensor_moment(legs: Sequence[CoefficientFamily], ell: int, fast: bool = True) -> complex:
    """``tau(A^ell)`` for the multi-leg operator."""
    forms, a0 = _leg_forms(legs)
    if fast and all(f.radial for f in forms):
        R, ls = _tensor_radial_profile(forms, a0, ell)
        return complex(np.trace(R[(0,) * len(forms)]) * math.exp(ls) / forms[0].n)
    _, E = tensor_power_entries(legs, ell)
    return complex(np.trace(E[(0,) * len(forms)]) / forms[0].n)


def tensor_haagerup_upper(legs: Sequence[CoefficientFamily], p: int, fast: bool = True) -> float:
    """Upper bound on the norm of the multi-leg operator.

    With ``q = p / 2`` and ``E`` the entries of ``A^q``,
    ``||A||^q <= sum_l prod_j (l_j + 1) sqrt(sum_{g in S_l} ||E(g)||^2)`` where
    ``S_l`` is the product of spheres of radii ``l = (l_1..l_k)``.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    forms, a0 = _leg_forms(legs)
    if all(f.is_zero for f in forms):
        return 0.0
    k, d = len(forms), forms[0].d
    q = p // 2
    if fast and all(f.radial for f in forms):
        R, ls = _tensor_radial_profile(forms, a0, q)
        flat = R.reshape(-1, R.shape[-2], R.shape[-1])
        nrm = block_opnorms(flat).reshape(R.shape[:-2])
        logS = _log_sphere_sizes(d, q)
        grids = np.meshgrid(*([np.arange(q + 1)] * k), indexing="ij")
        with np.errstate(divide="ignore"):
            terms = np.log(nrm)
        for gj in grids:
            terms = terms + np.log(gj + 1.0) + 0.5 * logS[gj]
        return float(math.exp((logsumexp(terms) + ls) / q))
    bidx, E = tensor_power_entries(legs, q)
    flat = E.reshape(-1, E.shape[-2], E.shape[-1])
    nrm2 = (block_opnorms(flat) ** 2).reshape(E.shape[:-2])
    bins = np.zeros((q + 1,) * k)
    lens = np.meshgrid(*([bidx.length] * k), indexing="ij")
    np.add.at(bins, tuple(x.ravel() for x in lens), nrm2.ravel())
    weight = np.ones((q + 1,) * k)
    for j, gj in enumerate(np.meshgrid(*([np.arange(q + 1)] * k), indexing="ij")):
        weight = weight * (gj + 1.0)
    return float(np.sum(weight * np.sqrt(bins)) ** (1.0 / q))


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def tensor_truncated_lower(legs: Sequence[CoefficientFamily], L: int, tol: float = 1e-9) -> float:
    """Compression of the multi-leg operator onto a product of radius-``L`` balls.

    When every leg is radial the compression is taken onto products of
    normalized sphere indicators up to radius ``L`` instead, which is far
    cheaper and converges to the norm.
    """
    forms, a0 = _leg_forms(legs)
    k, d, n = len(forms), forms[0].d, forms[0].n
    if all(f.is_zero for f in forms):
        return 0.0
    if all(f.radial for f in forms):
        w = np.full(L, math.sqrt(2 * d - 1))
        if L:
            w[0] = math.sqrt(2 * d)
        T = sp.diags([w, w], [-1, 1], shape=(L + 1, L + 1), format="csr")
        eye = sp.identity(L + 1, format="csr")
        mat = _kron_all([eye] * k + [sp.csr_matrix(a0)])
        for j, f in enumerate(forms):
            ops = [eye] * k
            ops[j] = T
            mat = mat + _kron_all(ops + [sp.csr_matrix(f.a[1])])
        return hermitian_extreme(mat.tocsr(), tol=tol)
    bidx = ball(d, L)
    b = bidx.size
    eye = sp.identity(b, format="csr")
    mat = _kron_all([eye] * k + [sp.csr_matrix(a0)])
    for j, f in enumerate(forms):
        for i in range(1, 2 * d + 1):
            if not np.any(f.a[i]):
                continue
            cols = np.nonzero(bidx.left[:, i] >= 0)[0]
            P = sp.csr_matrix((np.ones(cols.size), (bidx.left[cols, i], cols)), shape=(b, b))
            ops = [eye] * k
            ops[j] = P
            mat = mat + _kron_all(ops + [sp.csr_matrix(f.a[i])])
    return hermitian_extreme(mat.tocsr(), tol=tol)


def tensor_norm_bracket(legs: Sequence[CoefficientFamily], tol: float = 0.1,
                        max_power: int = 256, radial_depth: int = 150,
                        max_states: int = 2_000_000) -> NormBracket:
    """Bracket for the multi-leg norm (Haagerup upper, compression lower)."""
    forms, _ = _leg_forms(legs)
    k, d = len(forms), forms[0].d
    if all(f.is_zero for f in forms):
        return NormBracket(0.0, 0.0, True)
    radial = all(f.radial for f in forms)
    hist = []
    if radial:
        lower = tensor_truncated_lower(legs, radial_depth)
        hist.append(("radial_lower", radial_depth, lower))
    else:
        lower, L = 0.0, 1
        while ball_size(d, L) ** k * forms[0].n <= max_states // 10:
            lower = max(lower, tensor_truncated_lower(legs, L))
            hist.append(("truncated", L, lower))
            L += 1
    upper, q = math.inf, 1
    while 2 * q <= max_power:
        states = (q + 1) ** k if radial else ball_size(d, q) ** k
        if states > max_states:
            break
        upper = min(upper, tensor_haagerup_upper(legs, 2 * q))
        hist.append(("haagerup", 2 * q, upper))
        if upper - lower <= tol:
            break
        q *= 2
    return NormBracket(lower, upper, upper - lower <= tol, hist)
