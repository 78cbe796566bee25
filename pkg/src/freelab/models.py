"""Random matrix models ``A_N = a_0 x 1 + sum_i a_i x U_i`` and their norms.

Vectors of ``C^n x C^N`` are stored as ``(n, N)`` arrays ``X``; with this
layout ``kron(a, U) vec(X) = vec(a X U^T)``.  Unitary and orthogonal samples
are dense.  Permutations are kept as index maps and never densified:
``(U_sigma)_{x, y} = 1(sigma(x) = y)`` acts by ``X -> X[:, sigma]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._linalg import hermitian_extreme
from .starops import CoefficientFamily, _leg_forms, norm_bracket

KINDS = ("unitary", "orthogonal", "permutation")
DENSE_NORM_LIMIT = 6000


def rng_from(seed, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator for ``(seed, *keys)``.

    Distinct key tuples give independent substreams, so results do not depend
    on the order in which substreams are consumed.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def haar_unitary(N: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary by QR of a complex Ginibre matrix with phase correction."""
    z = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph[None, :]


def haar_orthogonal(N: int, rng: np.random.Generator) -> np.ndarray:
    """Haar orthogonal matrix (full O_N) by real QR with sign correction."""
    z = rng.standard_normal((N, N))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diagonal(r))[None, :]


def random_permutation(N: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation (Fisher-Yates shuffle of ``0..N-1``)."""
    return rng.permutation(N)


@dataclass
class ModelSample:
    """A sampled tuple ``(U_1, ..., U_d)``.

    ``mats`` holds dense matrices for unitary/orthogonal kinds and ``perms``
    a ``(d, N)`` integer array for the permutation kind.
    """

    kind: str
    N: int
    d: int
    seed: object
    mats: np.ndarray | None = None
    perms: np.ndarray | None = None

    def matrices(self) -> list[np.ndarray]:
        """Dense ``U_1..U_{2d}`` with ``U_{i+d} = U_i^*`` (densifies permutations)."""
        if self.mats is not None:
            base = list(self.mats)
        else:
            eye = np.eye(self.N)
            base = [eye[p] for p in self.perms]
        return base + [u.conj().T for u in base]

    def perm_maps(self) -> np.ndarray:
        """``(2d, N)`` maps ``sigma_1..sigma_{2d}`` with ``sigma_{i+d} = sigma_i^{-1}``."""
        if self.perms is None:
            raise ValueError("not a permutation sample")
        inv = np.argsort(self.perms, axis=1)
        return np.concatenate([self.perms, inv])

    def validate(self, tol: float = 1e-12) -> bool:
        if self.perms is not None:
            return all(np.array_equal(np.sort(p), np.arange(self.N)) for p in self.perms)
        eye = np.eye(self.N)
        return all(np.max(np.abs(u @ u.conj().T - eye)) <= tol for u in self.mats)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "N": self.N, "d": self.d, "seed": self.seed}
        if self.perms is not None:
            out["perms"] = self.perms.tolist()
        return out


def sample(model: str, N: int, d: int, seed) -> ModelSample:
    """Draw ``d`` independent matrices of the given kind, deterministically from ``seed``."""
    if model not in KINDS:
        raise ValueError(f"unknown model {model!r}; expected one of {KINDS}")
    if N < 1 or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    if model == "permutation":
        perms = np.stack([random_permutation(N, rng_from(seed, i)) for i in range(d)])
        return ModelSample(model, N, d, seed, perms=perms)
    draw = haar_unitary if model == "unitary" else haar_orthogonal
    mats = np.stack([draw(N, rng_from(seed, i)) for i in range(d)])
    return ModelSample(model, N, d, seed, mats=mats)


class Projector:
    """``Pi_N = 1 x (1 - J/N)``: projection onto ``C^n x (1_N)^perp``."""

    def __init__(self, N: int):
        self.N = N

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X - X.mean(axis=-1, keepdims=True)

    def matrix(self, n: int = 1) -> np.ndarray:
        return np.kron(np.eye(n), np.eye(self.N) - np.full((self.N, self.N), 1.0 / self.N))


class AssembledOperator:
    """``A_N`` for a coefficient family and a model sample."""

    def __init__(self, coeffs: CoefficientFamily, smp: ModelSample, matrix=None, maps=None):
        self.coeffs = coeffs
        self.sample = smp
        self.n = coeffs.n
        self.N = smp.N
        self.hermitian = coeffs.selfadjoint
        self._matrix = matrix
        self._maps = maps

    @property
    def dim(self) -> int:
        return self.n * self.N

    @property
    def structured(self) -> bool:
        return self._maps is not None

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Apply to ``X`` of shape ``(n, N)``."""
        if self._maps is None:
            return (self._matrix @ X.reshape(-1)).reshape(self.n, self.N)
        a = self.coeffs.a
        out = a[0] @ X
        for i in range(1, a.shape[0]):
            if np.any(a[i]):
                out = out + a[i] @ X[:, self._maps[i - 1]]
        return out

    def apply_adjoint(self, X: np.ndarray) -> np.ndarray:
        if self._maps is None:
            return (self._matrix.conj().T @ X.reshape(-1)).reshape(self.n, self.N)
        a = self.coeffs.a
        inv = np.argsort(self._maps, axis=1)
        out = a[0].conj().T @ X
        for i in range(1, a.shape[0]):
            if np.any(a[i]):
                out = out + a[i].conj().T @ X[:, inv[i - 1]]
        return out

    def dense(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix.toarray() if sp.issparse(self._matrix) else self._matrix
        eye = np.eye(self.dim, dtype=np.complex128)
        cols = [self.apply(eye[:, k].reshape(self.n, self.N)).reshape(-1) for k in range(self.dim)]
        return np.stack(cols, axis=1)

    def linear_operator(self, projector: Projector | None = None) -> spla.LinearOperator:
        n, N = self.n, self.N
        P = projector.apply if projector is not None else (lambda X: X)

        def mv(v):
            X = np.asarray(v, dtype=np.complex128).reshape(n, N)
            return P(self.apply(P(X))).reshape(-1)

        def rmv(v):
            X = np.asarray(v, dtype=np.complex128).reshape(n, N)
            return P(self.apply_adjoint(P(X))).reshape(-1)

        return spla.LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=rmv, dtype=np.complex128)


def assemble(coeffs: CoefficientFamily, smp: ModelSample, check: bool = True) -> AssembledOperator:
    """Assemble ``A_N`` with ``U_{i+d} = U_i^*``."""
    if coeffs.d != smp.d:
        raise ValueError("coefficient rank and sample rank differ")
    if smp.kind == "permutation":
        return AssembledOperator(coeffs, smp, maps=smp.perm_maps())
    a = coeffs.a
    mats = smp.matrices()
    A = np.kron(a[0], np.eye(smp.N))
    for i in range(1, a.shape[0]):
        if np.any(a[i]):
            A = A + np.kron(a[i], mats[i - 1])
    op = AssembledOperator(coeffs, smp, matrix=A)
    if check and op.hermitian and np.max(np.abs(A - A.conj().T), initial=0.0) > 1e-12:
        raise ArithmeticError("assembled operator is not Hermitian")
    return op


def operator_norm(op, projector: Projector | None = None, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest singular value of ``A`` (or of ``A Pi`` when a projector is given)."""
    if isinstance(op, np.ndarray):
        return float(np.linalg.norm(op, 2)) if op.size else 0.0
    if not op.structured and op.dim <= DENSE_NORM_LIMIT:
        A = op.dense()
        if projector is not None:
            A = A @ projector.matrix(op.n)
        if op.hermitian and projector is None:
            w = np.linalg.eigvalsh(A)
            return float(max(abs(w[0]), abs(w[-1])))
        return float(np.linalg.norm(A, 2))
    if op.hermitian:
        # Pi commutes with A for permutation models, so ||A Pi|| = ||Pi A Pi||
        if projector is not None and op.sample.kind != "permutation":
            return _svd_iterative(op, projector, tol, seed)
        return hermitian_extreme(op.linear_operator(projector), tol=tol, seed=seed)
    return _svd_iterative(op, projector, tol, seed)


def _svd_iterative(op, projector, tol, seed):
    L = op.linear_operator(None)
    P = projector.apply if projector is not None else (lambda X: X)
    n, N = op.n, op.N

    def mv(v):
        X = P(np.asarray(v, dtype=np.complex128).reshape(n, N))
        Y = L.matvec(X.reshape(-1))
        return P(L.rmatvec(Y).reshape(n, N)).reshape(-1)

    G = spla.LinearOperator((op.dim, op.dim), matvec=mv, dtype=np.complex128)
    return math.sqrt(hermitian_extreme(G, tol=tol, seed=seed))


def singular_values(op) -> np.ndarray:
    A = op.dense() if not isinstance(op, np.ndarray) else op
    return np.linalg.svd(A, compute_uv=False)


def schatten_norm(op, p: float) -> float:
    """Normalized Schatten norm ``(tr |T|^p / dim)^{1/p}``; ``p = inf`` gives the norm."""
    s = singular_values(op)
    if math.isinf(p):
        return float(s.max(initial=0.0))
    return float((np.sum(s ** p) / s.size) ** (1.0 / p))


def schatten_lift(op, p: float) -> float:
    """``dim^{1/p} ||T||_p``, an upper bound on ``||T||``."""
    dim = op.shape[0] if isinstance(op, np.ndarray) else op.dim
    return dim ** (1.0 / p) * schatten_norm(op, p)


def mc_trace_moment(coeffs: CoefficientFamily, ell: int, N: int, model: str = "unitary",
                    samples: int = 100, seed=0):
    """Monte Carlo estimate of ``E tau(A_N^ell)``.

    Returns
    -------
    mean : complex
    stderr : float
        Standard error of the mean (real and imaginary parts combined).
    """
    if ell == 0:
        return 1.0 + 0j, 0.0
    vals = np.empty(samples, dtype=np.complex128)
    for s in range(samples):
        A = assemble(coeffs, sample(model, N, coeffs.d, (seed, s)), check=False).dense()
        vals[s] = np.trace(np.linalg.matrix_power(A, ell)) / A.shape[0]
    mean = complex(vals.mean())
    if samples < 2:
        return mean, math.inf
    se = math.sqrt((vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / samples)
    return mean, se


@dataclass
class ConcentrationReport:
    N: int
    p: float
    values: np.ndarray
    mean: float
    std: float
    scale: float
    c_calibrated: float
    passed: bool
    slack: float = 10.0
    extra: dict = field(default_factory=dict)


def concentration_probe(coeffs: CoefficientFamily, N: int, p: float, samples: int = 20,
                        model: str = "unitary", seed=0, slack: float = 10.0,
                        star_norm: float | None = None) -> ConcentrationReport:
    """Fluctuations of ``||A_N||_p`` against the Gaussian concentration scale.

    The predicted scale is ``sqrt(d) ||A_star|| N^{-1/2 - 1/p}`` (with
    ``1/p = 0`` for ``p = inf``).  ``c_calibrated`` is the constant ``c`` for
    which a Gaussian with the observed standard deviation has tail
    ``exp(-c N^{1+2/p} t^2 / d)`` at deviation ``t ||A_star||``.
    """
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    if star_norm is None:
        star_norm = norm_bracket(coeffs, tol=0.05).upper
    vals = np.empty(samples)
    for s in range(samples):
        op = assemble(coeffs, sample(model, N, coeffs.d, (seed, s)), check=False)
        vals[s] = operator_norm(op) if math.isinf(p) else schatten_norm(op, p)
    std = float(vals.std(ddof=1)) if samples > 1 else 0.0
    scale = math.sqrt(coeffs.d) * star_norm * N ** (-0.5 - inv_p)
    if std > 0:
        c_cal = coeffs.d * star_norm ** 2 / (2 * std ** 2 * N ** (1 + 2 * inv_p))
    else:
        c_cal = math.inf
    return ConcentrationReport(N, p, vals, float(vals.mean()), std, scale, c_cal,
                               std <= slack * scale + 1e-14, slack)


def concentration_sweep(coeffs: CoefficientFamily, Ns, p: float, samples: int = 20,
                        model: str = "unitary", seed=0, factor: float = 3.0) -> dict:
    """Regress ``log std`` on ``log N`` and compare with ``-1/2 - 1/p``."""
    star_norm = norm_bracket(coeffs, tol=0.05).upper
    reps = [concentration_probe(coeffs, N, p, samples, model, (seed, N), star_norm=star_norm)
            for N in Ns]
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log([r.std for r in reps])
    slope = float(np.polyfit(x, y, 1)[0])
    expected = -0.5 - (0.0 if math.isinf(p) else 1.0 / p)
    ratio = slope / expected
    return {"reports": reps, "slope": slope, "expected": expected,
            "passed": 1.0 / factor <= ratio <= factor}


# ---------------------------------------------------------------------------
# several legs


@dataclass
class TensorLegOperator:
    """``A_N`` on ``C^n x (C^N)^{x k}`` built from one coefficient family per leg."""

    matrix: sp.csr_matrix
    n: int
    N: int
    k: int
    generators: dict
    projector: sp.csr_matrix | None
    hermitian: bool

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _embed(U, j, k, N):
    """``1^{x (j)} x U x 1^{x (k - j - 1)}`` as a sparse matrix (0-based leg j)."""
    out = None
    for t in range(k):
        m = sp.csr_matrix(U) if t == j else sp.identity(N, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    return out


def tensor_leg_model(legs, N: int, model: str = "unitary", seed=0,
                     cap: int = 200_000) -> TensorLegOperator:
    """Assemble ``a_0 x 1 + sum_{i,j} a_{i,j} x V_{i,j}`` on ``n N^k`` dimensions.

    ``V_{i,j}`` is ``U_{i,j}`` acting on leg ``j``; each leg gets an
    independent sample.  For permutations the projector onto
    ``(1_N^perp)^{x k}`` is attached.
    """
    forms, a0 = _leg_forms(legs)
    k, d, n = len(forms), forms[0].d, forms[0].n
    dim = n * N ** k
    if dim > cap:
        raise MemoryError(f"tensor model dimension {dim} exceeds cap {cap}")
    gens = {}
    mat = sp.kron(sp.csr_matrix(a0), sp.identity(N ** k, format="csr"), format="csr")
    for j, f in enumerate(forms):
        smp = sample(model, N, d, (seed, j))
        mats = smp.matrices()
        for i in range(1, 2 * d + 1):
            V = _embed(mats[i - 1], j, k, N)
            gens[(i, j)] = V
            if np.any(f.a[i]):
                mat = mat + sp.kron(sp.csr_matrix(f.a[i]), V, format="csr")
    proj = None
    if model == "permutation":
        q = np.eye(N) - np.full((N, N), 1.0 / N)
        proj = sp.kron(sp.identity(n, format="csr"),
                       _kron_dense([q] * k), format="csr")
    return TensorLegOperator(mat.tocsr(), n, N, k, gens, proj, True)


def _kron_dense(ms):
    out = ms[0]
    for m in ms[1:]:
        out = np.kron(out, m)
    return sp.csr_matrix(out)


def tensor_norm(op: TensorLegOperator, tol: float = 1e-8) -> float:
    """Norm of the tensor-leg operator (restricted to the projector's range if any)."""
    M = op.matrix
    if op.projector is not None:
        M = op.projector @ M @ op.projector
    return hermitian_extreme(M.tocsr(), tol=tol)
