"""Non-commutative Cauchy-Schwarz: lifted corners, Q factors and theta-control.

Positions are 0-based.  A family assigns to every position ``i`` an array of
shape ``(m_1, ..., m_k, D, D)``: the matrix ``X_{i, j}`` for every index
vector ``j`` in ``J_1 x ... x J_k`` with ``J_l = range(m_l)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._linalg import opnorm, psd_sqrt

OPEN_TOL = 1e-12


@dataclass(frozen=True)
class PairPartition:
    """Blocks of size 1 or 2 partitioning ``S``, a subset of ``range(r)``."""

    r: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(x) for x in b)) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        flat = [x for b in blocks for x in b]
        if any(len(b) not in (1, 2) for b in blocks):
            raise ValueError("blocks must be singletons or pairs")
        if len(set(flat)) != len(flat) or any(not 0 <= x < self.r for x in flat):
            raise ValueError("blocks must be disjoint subsets of range(r)")

    @classmethod
    def from_one_based(cls, r: int, blocks) -> "PairPartition":
        return cls(r, tuple(tuple(x - 1 for x in b) for b in blocks))

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def S(self) -> tuple:
        return tuple(sorted(x for b in self.blocks for x in b))

    @property
    def T(self) -> tuple:
        s = set(self.S)
        return tuple(i for i in range(self.r) if i not in s)

    def block_of(self, i: int) -> int | None:
        for l, b in enumerate(self.blocks):
            if i in b:
                return l
        return None

    def role(self, i: int) -> str:
        """``left``, ``right``, ``single`` or ``free`` (position in ``T``)."""
        l = self.block_of(i)
        if l is None:
            return "free"
        b = self.blocks[l]
        if len(b) == 1:
            return "single"
        return "left" if i == b[0] else "right"

    def open_blocks(self, i: int) -> tuple:
        return tuple(l for l, b in enumerate(self.blocks) if b[0] < i < b[-1])

    def dependence(self, i: int) -> tuple:
        """Coordinates on which ``X_i`` may depend."""
        l = self.block_of(i)
        return (l,) if l is not None else self.open_blocks(i)


@dataclass
class IndexedFamily:
    """``X_{i, j}`` for positions ``i`` and index vectors ``j``.

    ``mats[i]`` has shape ``(m_1, ..., m_k, D, D)``.  ``factors`` optionally
    records a tensor structure ``X_{i,j} = x_{i,j} (x) u_{i,j}`` per position
    (used by the theta-control certificate).
    """

    mats: list
    ms: tuple
    factors: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return len(self.mats)

    @property
    def D(self) -> int:
        return self.mats[0].shape[-1]

    def at(self, i: int, j: Sequence[int]) -> np.ndarray:
        return self.mats[i][tuple(j)]

    def along(self, i: int, l: int) -> np.ndarray:
        """``X_{i, j}`` as a function of coordinate ``l`` only (others at 0)."""
        idx = [0] * len(self.ms)
        idx[l] = slice(None)
        return self.mats[i][tuple(idx)]

    def depends_only_on(self, i: int, coords: Sequence[int], tol: float = OPEN_TOL) -> bool:
        """Exhaustive check that ``X_i`` is constant along the other coordinates."""
        A = self.mats[i]
        k = len(self.ms)
        idx = tuple(slice(None) if l in coords else slice(0, 1) for l in range(k))
        ref = A[idx]
        scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
        return bool(np.max(np.abs(A - ref), initial=0.0) <= tol * scale)

    def check_open(self, pi: PairPartition, tol: float = OPEN_TOL) -> bool:
        if len(self.ms) != pi.k or self.r != pi.r:
            raise ValueError("family shape does not match the partition")
        return all(self.depends_only_on(i, pi.dependence(i), tol) for i in range(self.r))

    def padded(self, m: int) -> "IndexedFamily":
        """Zero-pad every index set to ``range(m)``."""
        out = []
        for A in self.mats:
            B = np.zeros((m,) * len(self.ms) + A.shape[-2:], dtype=np.complex128)
            B[tuple(slice(0, s) for s in self.ms)] = A
            out.append(B)
        return IndexedFamily(out, (m,) * len(self.ms), dict(self.factors))


def family_from_functions(pi: PairPartition, ms: Sequence[int], funcs) -> IndexedFamily:
    """Tabulate ``funcs[i](j) -> matrix`` over the index product."""
    ms = tuple(ms)
    mats = []
    for i in range(pi.r):
        vals = [np.asarray(funcs[i](j), dtype=np.complex128) for j in itertools.product(*map(range, ms))]
        D = vals[0].shape[-1]
        mats.append(np.array(vals).reshape(ms + (D, D)))
    return IndexedFamily(mats, ms)


def random_open_family(pi: PairPartition, ms: Sequence[int], D: int, seed=None,
                       real: bool = False) -> IndexedFamily:
    """Random Gaussian family that is open for ``pi``."""
    rng = np.random.default_rng(seed)
    ms = tuple(ms)
    k = len(ms)
    mats = []
    for i in range(pi.r):
        dep = pi.dependence(i)
        shape = tuple(ms[l] if l in dep else 1 for l in range(k)) + (D, D)
        A = rng.standard_normal(shape)
        if not real:
            A = A + 1j * rng.standard_normal(shape)
        mats.append(np.broadcast_to(A, ms + (D, D)).astype(np.complex128))
    return IndexedFamily(mats, ms)


def random_partition(r: int, k: int, rng) -> PairPartition:
    """``k`` random blocks of size 1 or 2 inside ``range(r)`` (needs ``k <= r``)."""
    pos = list(rng.permutation(r))
    blocks = []
    for l in range(k):
        remaining = len(pos) - (k - l - 1)
        size = 2 if remaining >= 2 and rng.random() < 0.7 else 1
        blocks.append(tuple(int(x) for x in pos[:size]))
        pos = pos[size:]
    return PairPartition(r, tuple(blocks))


# ---------------------------------------------------------------------------
# X_pi and the lifted corner


def x_pi_sum(X: IndexedFamily, pi: PairPartition, delta=None) -> np.ndarray:
    """``sum_j delta_j X_{1,j} ... X_{r,j}`` by direct summation."""
    D = X.D
    out = np.zeros((D, D), dtype=np.complex128)
    for j in itertools.product(*map(range, X.ms)):
        prod = np.eye(D, dtype=np.complex128)
        for i in range(pi.r):
            prod = prod @ X.mats[i][j]
        out += prod if delta is None else delta[j] * prod
    return out


def _double_singletons(X: IndexedFamily, pi: PairPartition):
    """Split each singleton ``X = W S V*`` into ``(W S^{1/2} W*)(W S^{1/2} V*)``."""
    mats, blocks = [], []
    newpos = {}
    for i in range(pi.r):
        role = pi.role(i)
        newpos[i] = len(mats)
        if role != "single":
            mats.append(X.mats[i])
            continue
        A = X.mats[i]
        W, s, Vh = np.linalg.svd(A)
        rs = np.sqrt(s)
        L = np.einsum("...ab,...b,...cb->...ac", W, rs, W.conj())
        R = np.einsum("...ab,...b,...bc->...ac", W, rs, Vh)
        mats.extend([L, R])
    for b in pi.blocks:
        if len(b) == 1:
            blocks.append((newpos[b[0]], newpos[b[0]] + 1))
        else:
            blocks.append((newpos[b[0]], newpos[b[1]]))
    return IndexedFamily(mats, X.ms, dict(X.factors)), PairPartition(len(mats), tuple(blocks))


def _unit(m, a, b):
    E = np.zeros((m, m))
    E[a, b] = 1.0
    return E


def lifted_operators(X: IndexedFamily, pi: PairPartition) -> tuple[list, IndexedFamily, PairPartition]:
    """The lifted elements of ``M_m^{(x) k} (x) M_D`` (after singleton doubling)."""
    X2, pi2 = _double_singletons(X, pi)
    m = max(X.ms) if X.ms else 1
    if any(s != m for s in X2.ms):
        X2 = X2.padded(m)
    k, D = pi2.k, X2.D
    eye = np.eye(m)
    lifted = []
    for i in range(pi2.r):
        role = pi2.role(i)
        if role in ("left", "right"):
            l = pi2.block_of(i)
            vals = X2.along(i, l)
            T = 0
            for j in range(m):
                E = _unit(m, 0, j) if role == "left" else _unit(m, j, 0)
                facs = [E if q == l else eye for q in range(k)]
                T = T + np.kron(_kron_list(facs), vals[j])
            lifted.append(T)
        else:
            L = pi2.open_blocks(i)
            T = 0
            for jj in itertools.product(range(m), repeat=len(L)):
                idx = [0] * k
                facs = [eye] * k
                for l, j in zip(L, jj):
                    idx[l] = j
                    facs[l] = _unit(m, j, j)
                T = T + np.kron(_kron_list(facs), X2.mats[i][tuple(idx)])
            lifted.append(T)
    return lifted, X2, pi2


def _kron_list(facs):
    out = np.ones((1, 1))
    for f in facs:
        out = np.kron(out, f)
    return out


def lifted_corner(X: IndexedFamily, pi: PairPartition, check_open: bool = True) -> np.ndarray:
    """Corner ``(1, ..., 1)`` block of the product of lifted elements.

    Equals :func:`x_pi_sum` whenever ``X`` is open for ``pi``; the openness
    hypothesis is verified first and a ``ValueError`` raised otherwise.
    """
    if check_open and not X.check_open(pi):
        raise ValueError("family is not open for the partition")
    if any(s == 0 for s in X.ms):
        return np.zeros((X.D, X.D), dtype=np.complex128)
    lifted, X2, pi2 = lifted_operators(X, pi)
    prod = lifted[0]
    for T in lifted[1:]:
        prod = prod @ T
    D = X.D
    return prod[:D, :D]


# ---------------------------------------------------------------------------
# Q factors


def _sqrt_sum(mats) -> np.ndarray:
    return sum(psd_sqrt(M) for M in mats)


def q_factors(X: IndexedFamily, pi: PairPartition) -> np.ndarray:
    """``Q_{pi, i}`` for every position."""
    q = np.empty(pi.r)
    for i in range(pi.r):
        role = pi.role(i)
        if role == "free":
            A = X.mats[i].reshape((-1,) + X.mats[i].shape[-2:])
            q[i] = max(opnorm(a) for a in A)
            continue
        vals = X.along(i, pi.block_of(i))
        if role == "left":
            q[i] = math.sqrt(opnorm(sum(v @ v.conj().T for v in vals)))
        elif role == "right":
            q[i] = math.sqrt(opnorm(sum(v.conj().T @ v for v in vals)))
        else:
            lhs = opnorm(_sqrt_sum(v @ v.conj().T for v in vals))
            rhs = opnorm(_sqrt_sum(v.conj().T @ v for v in vals))
            q[i] = math.sqrt(lhs) * math.sqrt(rhs)
    return q


@dataclass
class BoundReport:
    norm: float
    q: np.ndarray
    bound: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.norm / self.bound if self.bound > 0 else (0.0 if self.norm == 0 else math.inf)


def nccs_bound_check(X: IndexedFamily, pi: PairPartition, slack: float = 1e-10) -> BoundReport:
    """``||X_pi|| <= prod_i Q_{pi, i}`` up to ``slack * max(1, bound)``."""
    q = q_factors(X, pi)
    nrm = opnorm(x_pi_sum(X, pi))
    bound = float(np.prod(q))
    return BoundReport(nrm, q, bound, nrm <= bound + slack * max(1.0, bound))


# ---------------------------------------------------------------------------
# theta control


@dataclass
class ThetaCertificate:
    theta: float
    structure_ok: bool
    passed: bool
    worst_ratio: float
    strong_left: float
    strong_right: float


def _abs_left(A):
    return psd_sqrt(A @ A.conj().T)


def _abs_right(A):
    return psd_sqrt(A.conj().T @ A)


def _check_structure(X: IndexedFamily, pi: PairPartition, structure: str, f=None,
                     tol: float = 1e-10) -> tuple[bool, float]:
    if structure == "unitary_tensor":
        n = None
        for i in pi.S:
            if i not in X.factors:
                return False, math.nan
            x, u = X.factors[i]
            n = x.shape[-1]
            vals = X.along(i, pi.block_of(i))
            for j in range(vals.shape[0]):
                if np.max(np.abs(np.kron(x[j], u[j]) - vals[j])) > tol:
                    return False, math.nan
                if np.max(np.abs(u[j] @ u[j].conj().T - np.eye(u.shape[-1]))) > tol:
                    return False, math.nan
        return True, float(n if n is not None else 1)
    if structure == "shared_fixed_vector":
        if f is None:
            return False, math.nan
        f = np.asarray(f, dtype=np.complex128)
        f = f / np.linalg.norm(f)
        for i in pi.S:
            vals = X.along(i, pi.block_of(i))
            for v in vals:
                nv = opnorm(v)
                if np.max(np.abs(v @ f - nv * f)) > tol or np.max(np.abs(v.conj().T @ f - nv * f)) > tol:
                    return False, math.nan
        return True, 1.0
    raise ValueError(f"unknown structure {structure!r}")


def theta_control_certificate(X: IndexedFamily, pi: PairPartition, structure: str, f=None,
                              samples: int = 200, seed=0, slack: float = 1e-10) -> ThetaCertificate:
    """Validate the structural hypothesis and test theta-control by sampling.

    ``theta = n`` for tensor families ``x (x) u`` with ``u`` unitary and
    ``theta = 1`` when a unit vector is a common fixed vector of all
    ``X_{i,j}`` and ``X_{i,j}^*`` with eigenvalue ``||X_{i,j}||``.  The
    strong-control sums (left and right absolute values) are also reported
    relative to ``theta^k prod Q``.
    """
    ok, theta = _check_structure(X, pi, structure, f)
    if not ok:
        return ThetaCertificate(math.nan, False, False, math.nan, math.nan, math.nan)
    q = q_factors(X, pi)
    bound = theta ** pi.k * float(np.prod(q))
    rng = np.random.default_rng(seed)
    terms = {}
    D = X.D
    for j in itertools.product(*map(range, X.ms)):
        prod = np.eye(D, dtype=np.complex128)
        for i in range(pi.r):
            prod = prod @ X.mats[i][j]
        terms[j] = prod
    worst = 0.0
    for s in range(samples):
        delta = rng.choice([-1.0, 1.0], size=X.ms) if s % 2 == 0 else rng.uniform(-1, 1, size=X.ms)
        tot = sum(delta[j] * T for j, T in terms.items())
        worst = max(worst, opnorm(tot))
    left = opnorm(sum(_abs_left(T) for T in terms.values()))
    right = opnorm(sum(_abs_right(T) for T in terms.values()))
    den = bound if bound > 0 else 1.0
    tol = slack * max(1.0, bound)
    passed = worst <= bound + tol and left <= bound + tol and right <= bound + tol
    return ThetaCertificate(theta, True, passed, worst / den, left / den, right / den)


def explore_non_open(pi: PairPartition, ms: Sequence[int], D: int, trials: int = 200, seed=0) -> float:
    """Largest ``||X_pi|| / prod Q`` over random non-open families.

    Exploratory only: no inequality is asserted for non-open families.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mats = []
        for i in range(pi.r):
            dep = pi.dependence(i) if pi.role(i) != "free" else tuple(range(pi.k))
            shape = tuple(ms[l] if l in dep else 1 for l in range(pi.k)) + (D, D)
            A = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            mats.append(np.broadcast_to(A, tuple(ms) + (D, D)).astype(np.complex128))
        X = IndexedFamily(mats, tuple(ms))
        rep = nccs_bound_check(X, pi)
        worst = max(worst, rep.ratio)
    return worst


# ---------------------------------------------------------------------------
# Khintchine


@dataclass
class KhintchineReport:
    estimate: float
    stderr: float
    rhs: float
    passed: bool


def khintchine_check(Xs: Sequence[np.ndarray], k: int, samples: int = 10_000, seed=0) -> KhintchineReport:
    """Monte Carlo ``E tau |sum_j g_j X_j|^{2k}`` against ``(2k-1)!! max(...)``.

    ``tau`` is the normalized trace and ``|x|^2 = x x^*``.
    """
    Xs = np.asarray(Xs, dtype=np.complex128)
    mdim, D = Xs.shape[0], Xs.shape[-1]
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, mdim))
    S = np.einsum("sj,jab->sab", g, Xs)
    P = S @ np.conj(np.transpose(S, (0, 2, 1)))
    vals = np.real(np.trace(np.linalg.matrix_power(P, k), axis1=1, axis2=2)) / D
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    L = sum(x @ x.conj().T for x in Xs)
    R = sum(x.conj().T @ x for x in Xs)
    tl = np.real(np.trace(np.linalg.matrix_power(L, k))) / D
    tr = np.real(np.trace(np.linalg.matrix_power(R, k))) / D
    rhs = math.factorial(2 * k) / (2 ** k * math.factorial(k)) * max(tl, tr)
    return KhintchineReport(est, se, float(rhs), est <= rhs + 4 * se)
