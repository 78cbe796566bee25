"""Hot loops: transfer steps on free-group balls and Schreier ball cycle ranks.

Every kernel has two implementations with identical results.  The numba one
is used when numba is importable and ``FREELAB_DISABLE_NUMBA`` is unset; the
numpy one otherwise.  Both are exposed under explicit names so the benchmark
and the tests can compare them directly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ._accel import NUMBA_AVAILABLE, njit


# ---------------------------------------------------------------------------
# transfer step  E'(h) = sum_i a_i E(g_i^{-1} h)


@njit
def _transfer_step_nb(E, left, a, starr, size_in, size_out, kill_origin):
    D1 = a.shape[0]
    n = a.shape[1]
    out = np.zeros((size_out, n, n), dtype=np.complex128)
    for h in range(size_out):
        for i in range(D1):
            if i == 0:
                src = h
            else:
                src = left[h, starr[i]]
            if src < 0 or src >= size_in:
                continue
            ai = a[i]
            Es = E[src]
            for r in range(n):
                for s in range(n):
                    air = ai[r, s]
                    if air == 0:
                        continue
                    for c in range(n):
                        out[h, r, c] += air * Es[s, c]
    if kill_origin:
        out[0] = 0
    return out


def _transfer_step_np(E, left, a, starr, size_in, size_out, kill_origin):
    n = a.shape[1]
    Epad = np.concatenate([E[:size_in], np.zeros((1, n, n), dtype=np.complex128)])
    out = np.zeros((size_out, n, n), dtype=np.complex128)
    for i in range(a.shape[0]):
        if not np.any(a[i]):
            continue
        if i == 0:
            idx = np.arange(size_out)
        else:
            idx = left[:size_out, starr[i]].copy()
        idx[(idx < 0) | (idx >= size_in)] = size_in
        out += np.matmul(a[i], Epad[idx])
    if kill_origin:
        out[0] = 0
    return out


def transfer_step(E, left, a, starr, size_in, size_out, kill_origin=False, backend=None):
    """One step of the free transfer recursion on a ball.

    Parameters
    ----------
    E : ndarray, shape (>= size_in, n, n)
        Current block vector indexed by ball elements.
    left : ndarray
        Left-multiplication table of a :class:`~freelab.freegroup.BallIndex`.
    a : ndarray, shape (2d + 1, n, n)
        Coefficients.
    starr : ndarray
        Involution table, ``starr[i] = i*``.
    size_in, size_out : int
        Support of the input and length of the output.
    kill_origin : bool
        Zero the unit entry after the step (operator restricted to F_d minus
        the unit).
    """
    use_nb = NUMBA_AVAILABLE if backend is None else backend == "numba"
    E = np.ascontiguousarray(E, dtype=np.complex128)
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if use_nb:
        return _transfer_step_nb(E, left, a, starr, int(size_in), int(size_out), bool(kill_origin))
    return _transfer_step_np(E, left, a, starr, int(size_in), int(size_out), bool(kill_origin))


# ---------------------------------------------------------------------------
# Schreier graph: cycle-space dimension of every radius-h ball


@njit
def _ball_cycle_ranks_nb(nbr, h):
    N = nbr.shape[0]
    D = nbr.shape[1]
    dist = np.full(N, -1, dtype=np.int64)
    queue = np.empty(N, dtype=np.int64)
    out = np.zeros(N, dtype=np.int64)
    for x in range(N):
        head = 0
        tail = 1
        queue[0] = x
        dist[x] = 0
        while head < tail:
            u = queue[head]
            head += 1
            if dist[u] == h:
                continue
            for k in range(D):
                w = nbr[u, k]
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue[tail] = w
                    tail += 1
        # count half-edges with both ends inside; each edge appears twice
        half = 0
        for q in range(tail):
            u = queue[q]
            for k in range(D):
                if dist[nbr[u, k]] >= 0:
                    half += 1
        out[x] = half // 2 - tail + 1
        for q in range(tail):
            dist[queue[q]] = -1
    return out


def _ball_cycle_ranks_np(nbr, h):
    N, D = nbr.shape
    rows = np.repeat(np.arange(N), D)
    cols = nbr.ravel()
    adj = sp.csr_matrix((np.ones(rows.size, dtype=np.int64), (rows, cols)), shape=(N, N))
    adj.data[:] = 1
    adj.sum_duplicates()
    adj.data[:] = 1
    reach = sp.identity(N, dtype=np.int64, format="csr")
    step = (adj + sp.identity(N, dtype=np.int64, format="csr")).tocsr()
    step.data[:] = 1
    for _ in range(h):
        reach = reach @ step
        reach.data[:] = 1
    reach = reach.tocsr()
    verts = np.asarray(reach.sum(axis=1)).ravel()
    # half-edge (u, k) counts for x iff u and nbr[u, k] are both in the ball of x
    half = np.zeros(N, dtype=np.int64)
    for k in range(D):
        perm = sp.csr_matrix((np.ones(N, dtype=np.int64), (np.arange(N), nbr[:, k])), shape=(N, N))
        moved = reach @ perm.T  # moved[x, u] = reach[x, nbr[u, k]]
        half += np.asarray(reach.multiply(moved).sum(axis=1)).ravel()
    return half // 2 - verts + 1


def ball_cycle_ranks(nbr: np.ndarray, h: int, backend=None) -> np.ndarray:
    """Cycle-space dimension ``e - v + 1`` of the radius-``h`` ball at every vertex.

    ``nbr[x, k]`` lists the ``D`` colored half-edges at ``x`` (for a Schreier
    graph, ``D = 2d`` with ``nbr[:, i]`` the image under the i-th generator).
    Loops and multi-edges are counted with multiplicity.
    """
    use_nb = NUMBA_AVAILABLE if backend is None else backend == "numba"
    nbr = np.ascontiguousarray(nbr, dtype=np.int64)
    if use_nb:
        return _ball_cycle_ranks_nb(nbr, int(h))
    return _ball_cycle_ranks_np(nbr, int(h))
