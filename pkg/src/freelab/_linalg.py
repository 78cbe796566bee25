"""Small linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2_000
PSD_CLIP = -1e-12
PSD_FAIL = -1e-8


def opnorm(m: np.ndarray) -> float:
    """Operator (spectral) norm of a dense matrix."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def block_opnorms(blocks: np.ndarray) -> np.ndarray:
    """Spectral norms of a stack of square blocks, shape ``(K, n, n)``."""
    if blocks.shape[-1] == 1:
        return np.abs(blocks[:, 0, 0])
    return np.linalg.norm(blocks, ord=2, axis=(1, 2))


def psd_sqrt(m: np.ndarray, tol_fail: float = PSD_FAIL) -> np.ndarray:
    """Hermitian square root with repair of tiny negative eigenvalues.

    Eigenvalues in ``[tol_fail, 0)`` are treated as roundoff and clipped to 0;
    anything below raises ``ValueError``.
    """
    h = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < tol_fail * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def is_hermitian(m, tol: float = 1e-12) -> bool:
    if sp.issparse(m):
        diff = (m - m.conj().T)
        return diff.nnz == 0 or float(abs(diff).max()) <= tol
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def hermitian_extreme(m, tol: float = 1e-9, seed: int = 0, dense_limit: int = DENSE_LIMIT) -> float:
    """Spectral radius of a Hermitian matrix or linear operator.

    Dense eigensolve below ``dense_limit``; Lanczos (ARPACK) above, with a
    seeded random start vector.  For Hermitian inputs the Lanczos value never
    exceeds the true spectral radius.
    """
    dim = m.shape[0]
    if dim == 0:
        return 0.0
    if not isinstance(m, spla.LinearOperator) and np.iscomplexobj(m):
        imag = m.imag.data if sp.issparse(m) else m.imag
        if not np.any(imag):
            m = m.real
    if not isinstance(m, spla.LinearOperator) and dim <= dense_limit:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m)
        w = np.linalg.eigvalsh(dense)
        return float(max(abs(w[0]), abs(w[-1])))
    rng = np.random.default_rng(seed)
    dtype = getattr(m, "dtype", np.complex128)
    v0 = rng.standard_normal(dim)
    if np.iscomplexobj(np.zeros(1, dtype=dtype)):
        v0 = v0 + 1j * rng.standard_normal(dim)
    w = spla.eigsh(m, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False,
                   maxiter=max(1000, 20 * dim))
    return float(abs(w[0]))


def block_tridiagonal_extreme(diag: np.ndarray, off: np.ndarray) -> float:
    """Spectral radius of a Hermitian block tridiagonal matrix.

    ``diag`` has shape ``(M, n, n)`` and ``off`` shape ``(M - 1, n, n)`` with
    ``off[m]`` the block at position ``(m + 1, m)``.
    """
    M, n, _ = diag.shape
    dim = M * n
    if n == 1:
        d = diag[:, 0, 0].real
        e = off[:, 0, 0]
        if np.all(np.abs(e.imag) == 0) and np.all(np.abs(diag[:, 0, 0].imag) == 0):
            w = sla.eigvalsh_tridiagonal(d, e.real, select="i", select_range=(0, 0))
            w2 = sla.eigvalsh_tridiagonal(d, e.real, select="i", select_range=(M - 1, M - 1))
            return float(max(abs(w[0]), abs(w2[0])))
    # lower banded storage with bandwidth 2n - 1
    bw = 2 * n - 1
    band = np.zeros((bw + 1, dim), dtype=np.complex128)
    for m in range(M):
        for r in range(n):
            for c in range(r + 1):
                band[r - c, m * n + c] = diag[m, r, c]
        if m + 1 < M:
            for r in range(n):
                for c in range(n):
                    band[n + r - c, m * n + c] = off[m, r, c]
    lo = sla.eig_banded(band, lower=True, eigvals_only=True, select="i", select_range=(0, 0))
    hi = sla.eig_banded(band, lower=True, eigvals_only=True, select="i", select_range=(dim - 1, dim - 1))
    return float(max(abs(lo[0]), abs(hi[0])))
