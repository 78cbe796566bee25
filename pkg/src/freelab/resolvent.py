"""Operator Ihara-Bass identity at large ``|z|``.

``gamma(z)`` and ``gamma_i(z)`` are the diagonal resolvent entries of the
free operator at the unit and (for the operator restricted to the group
minus the unit) at ``g_i``.  Their Laurent coefficients in ``1/z`` are the
return-walk sums, which satisfy the first-step recursion on the tree

    c_i[k] = [k == 0] + a_0 c_i[k-1] + sum_{j != i*} sum_{s+t=k-2} a_{j*} c_j[s] a_j c_i[t]

(``c[k]`` for the unit uses all ``j``).  The series is truncated at order
``L`` with the geometric tail ``(S/|z|)^{L+1} / (1 - S/|z|) / |z|``,
``S = sum_i ||a_i||``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._linalg import opnorm
from .freegroup import ball, star
from .models import ModelSample, assemble
from .starops import CoefficientFamily


def coefficient_mass(coeffs: CoefficientFamily) -> float:
    """``S = sum_{i=0}^{2d} ||a_i||``, a bound on ``||A||`` for any unitaries."""
    return float(sum(opnorm(a) for a in coeffs.a))


def default_z_min(coeffs: CoefficientFamily) -> float:
    return 10.0 * (1.0 + coefficient_mass(coeffs))


def return_series(coeffs: CoefficientFamily, L: int):
    """Return-walk coefficients up to order ``L``.

    Returns
    -------
    c0 : ndarray (L + 1, n, n)
        ``(A^k)_{o o}``.
    ci : ndarray (2d, L + 1, n, n)
        ``((A^o)^k)_{g_i g_i}`` for ``i = 1..2d``.
    """
    d, n = coeffs.d, coeffs.n
    a = coeffs.a
    D = 2 * d
    ci = np.zeros((D, L + 1, n, n), dtype=np.complex128)
    c0 = np.zeros((L + 1, n, n), dtype=np.complex128)
    # conj[j] = a_{j*} c_j[s] a_j, filled as c_j becomes available
    conj = np.zeros((D, L + 1, n, n), dtype=np.complex128)
    eye = np.eye(n, dtype=np.complex128)
    for k in range(L + 1):
        for i in range(1, D + 1):
            acc = eye.copy() if k == 0 else a[0] @ ci[i - 1, k - 1]
            if k >= 2:
                excl = star(i, d) - 1
                loop = conj[:, :k - 1].sum(axis=0) - conj[excl, :k - 1]
                # sum_{s+t=k-2} loop[s] c_i[t]
                acc = acc + np.einsum("sab,sbc->ac", loop, ci[i - 1, k - 2::-1][:k - 1])
            ci[i - 1, k] = acc
        for j in range(1, D + 1):
            conj[j - 1, k] = a[star(j, d)] @ ci[j - 1, k] @ a[j]
        acc = eye.copy() if k == 0 else a[0] @ c0[k - 1]
        if k >= 2:
            loop = conj[:, :k - 1].sum(axis=0)
            acc = acc + np.einsum("sab,sbc->ac", loop, c0[k - 2::-1][:k - 1])
        c0[k] = acc
    return c0, ci


@dataclass
class ResolventDiagonal:
    z: complex
    gamma: np.ndarray
    gammas: np.ndarray  # (2d, n, n), gammas[i - 1] = gamma_i
    tail_bound: float
    depth: int


def resolvent_diagonal(coeffs: CoefficientFamily, z: complex, L: int = 40) -> ResolventDiagonal:
    """Truncated Laurent series for ``gamma(z)`` and ``gamma_i(z)``; needs ``|z| > S``."""
    S = coefficient_mass(coeffs)
    if abs(z) <= S:
        raise ValueError(f"|z| = {abs(z):.4g} is inside the convergence radius {S:.4g}")
    c0, ci = return_series(coeffs, L)
    w = (1.0 / z) ** np.arange(1, L + 2)
    gamma = np.tensordot(w, c0, axes=(0, 0))
    gammas = np.einsum("k,ikab->iab", w, ci)
    r = S / abs(z)
    tail = r ** (L + 1) / (1 - r) / abs(z)
    return ResolventDiagonal(z, gamma, gammas, tail, L)


def fixed_point_scalar(d: int, z: complex, iters: int = 10_000, tol: float = 1e-15):
    """Scalar unit-coefficient fixed points ``g_i = 1/(z - (2d-1) g_i)``, ``g = 1/(z - 2d g_i)``."""
    gi = 1.0 / z
    for _ in range(iters):
        nxt = 1.0 / (z - (2 * d - 1) * gi)
        if abs(nxt - gi) <= tol * abs(nxt):
            gi = nxt
            break
        gi = nxt
    return 1.0 / (z - 2 * d * gi), gi


# ---------------------------------------------------------------------------
# non-backtracking operator B(z)


@dataclass
class NBOperatorZ:
    matrix: np.ndarray  # coefficient (x) model (x) C^{2d}
    n: int
    N: int
    d: int

    def block(self, j: int, i: int) -> np.ndarray:
        """Block ``(j, i)`` of the color structure (colors 1..2d)."""
        D = 2 * self.d
        M = self.matrix.reshape(self.n * self.N, D, self.n * self.N, D)
        return M[:, j - 1, :, i - 1]


def _free_shifts(d: int, L: int) -> list:
    """Compressions of ``lambda(g_i)`` to ``l^2(B_L)`` (partial permutations)."""
    bidx = ball(d, L)
    out = []
    for i in range(1, 2 * d + 1):
        cols = np.nonzero(bidx.left[:, i] >= 0)[0]
        rows = bidx.left[cols, i]
        out.append(sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(bidx.size, bidx.size)).toarray())
    return out


def assemble_nb_z(coeffs: CoefficientFamily, model, z: complex, L: int = 40,
                  rd: ResolventDiagonal | None = None) -> NBOperatorZ:
    """Dense ``B(z) = sum_{i != j*} gamma_i(z) a_i (x) u_i (x) E_{ji}``.

    ``model`` is a :class:`ModelSample` or an integer radius ``R`` for the
    compression of the free shifts to ``B_R``.
    """
    d, n = coeffs.d, coeffs.n
    rd = rd or resolvent_diagonal(coeffs, z, L)
    if isinstance(model, ModelSample):
        us = model.matrices()
    else:
        us = _free_shifts(d, int(model))
    N = us[0].shape[0]
    D = 2 * d
    out = np.zeros((n * N * D, n * N * D), dtype=np.complex128)
    view = out.reshape(n * N, D, n * N, D)
    for i in range(1, D + 1):
        blk = np.kron(rd.gammas[i - 1] @ coeffs.a[i], us[i - 1])
        for j in range(1, D + 1):
            if i == star(j, d):
                continue
            view[:, j - 1, :, i - 1] = blk
    return NBOperatorZ(out, n, N, d)


# ---------------------------------------------------------------------------
# identity check


@dataclass
class IdentityReport:
    z: complex
    residual: float
    tail_bound: float
    cond: float
    depth: int

    @property
    def passed(self) -> bool:
        return self.residual <= 1e-8 + self.tail_bound


def verify_identity(coeffs: CoefficientFamily, smp: ModelSample, z: complex | None = None,
                    L: int = 40, z_min: float | None = None, max_cond: float = 1e12) -> IdentityReport:
    """Max-entry gap between ``(z - A)^{-1}`` and the non-backtracking side.

    The right side is ``Ph (1 - B)^{-1} (1 + B/(2d-1)) Ph^* (gamma (x) 1)``
    with ``Ph = P / sqrt(2d)`` summing the color coordinate.
    """
    z_min = default_z_min(coeffs) if z_min is None else z_min
    z = z_min if z is None else z
    if abs(z) < z_min:
        raise ValueError(f"|z| = {abs(z):.4g} below z_min = {z_min:.4g}")
    d, n, N = coeffs.d, coeffs.n, smp.N
    D = 2 * d
    A = assemble(coeffs, smp).dense()
    lhs = np.linalg.inv(z * np.eye(n * N) - A)
    rd = resolvent_diagonal(coeffs, z, L)
    B = assemble_nb_z(coeffs, smp, z, rd=rd).matrix
    one = np.eye(n * N * D)
    M = one - B
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"1 - B(z) is numerically singular (cond {cond:.3e})")
    Ph = np.kron(np.eye(n * N), np.ones((1, D))) / math.sqrt(D)
    inner = np.linalg.solve(M, one + B / (D - 1))
    rhs = Ph @ inner @ Ph.T @ np.kron(rd.gamma, np.eye(N))
    return IdentityReport(z, float(np.max(np.abs(lhs - rhs))), rd.tail_bound, cond, L)


def depth_sweep(coeffs: CoefficientFamily, smp: ModelSample, z: complex | None = None,
                depths=(10, 20, 40), z_min: float | None = None) -> list:
    return [verify_identity(coeffs, smp, z, L, z_min=z_min) for L in depths]


def z_sweep(coeffs: CoefficientFamily, smp: ModelSample, zs, L: int = 40,
            z_min: float | None = None) -> list:
    """Reports over a z grid; points inside the series radius are skipped."""
    S = coefficient_mass(coeffs)
    return [verify_identity(coeffs, smp, z, L, z_min=z_min) for z in zs if abs(z) > S]


def sweep_to_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z", "residual", "tail_bound", "cond"])
        for r in reports:
            w.writerow([r.z, r.residual, r.tail_bound, r.cond])
