import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freelab import nccs as C


def _scalar_family(xs, ys):
    pi = C.PairPartition(2, ((0, 1),))
    X = C.family_from_functions(pi, (len(xs),), [lambda j: [[xs[j[0]]]], lambda j: [[ys[j[0]]]]])
    return X, pi


def test_scalar_cauchy_schwarz():
    xs = np.array([1.0, 2.0 - 1j, 0.5j])
    X, pi = _scalar_family(xs, np.array([0.3, -1.0, 2.0]))
    assert C.x_pi_sum(X, pi)[0, 0] == pytest.approx(0.3 - 2 + 1j + 1j)
    rep = C.nccs_bound_check(X, pi)
    assert rep.q[0] == pytest.approx(np.linalg.norm(xs))
    assert rep.passed
    X, pi = _scalar_family(xs, xs.conj())
    rep = C.nccs_bound_check(X, pi)
    assert rep.norm == pytest.approx(rep.bound)


def test_identity_pair_block():
    m, D = 5, 3
    pi = C.PairPartition(2, ((0, 1),))
    X = C.family_from_functions(pi, (m,), [lambda j: np.eye(D)] * 2)
    q = C.q_factors(X, pi)
    assert np.allclose(q, math.sqrt(m))
    assert np.allclose(C.lifted_corner(X, pi), m * np.eye(D))


def test_empty_index_set():
    pi = C.PairPartition(2, ((0, 1),))
    X = C.IndexedFamily([np.zeros((0, 2, 2))] * 2, (0,))
    assert np.all(C.x_pi_sum(X, pi) == 0)
    assert np.all(C.lifted_corner(X, pi) == 0)


def test_paper_pattern_corner():
    pi = C.PairPartition.from_one_based(8, ((1, 5), (2, 7), (4, 8)))
    assert pi.T == (2, 5)
    assert pi.open_blocks(2) == (0, 1) and pi.open_blocks(5) == (1, 2)
    X = C.random_open_family(pi, (2, 2, 2), 2, seed=4)
    a, b = C.x_pi_sum(X, pi), C.lifted_corner(X, pi)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1, np.abs(a).max())
    assert C.nccs_bound_check(X, pi).passed


def test_non_open_refused():
    pi = C.PairPartition.from_one_based(3, ((1, 2),))
    rng = np.random.default_rng(0)
    X = C.IndexedFamily([rng.standard_normal((2, 2, 2)) for _ in range(3)], (2,))
    assert not X.check_open(pi)
    with pytest.raises(ValueError):
        C.lifted_corner(X, pi)
    # the middle position may depend on the open block
    pi2 = C.PairPartition.from_one_based(3, ((1, 3),))
    Y = C.random_open_family(pi2, (3,), 2, seed=1)
    assert Y.check_open(pi2)
    ratio = C.explore_non_open(C.PairPartition.from_one_based(4, ((1, 3), (2, 4))), (2, 2), 2, trials=20)
    assert math.isfinite(ratio)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_corner_identity_and_bound(r, k, seed):
    k = min(k, r)
    rng = np.random.default_rng(seed)
    pi = C.random_partition(r, k, rng)
    ms = tuple(int(x) for x in rng.integers(1, 5, size=k))
    D = int(rng.integers(1, 5))
    X = C.random_open_family(pi, ms, D, seed=seed)
    a, b = C.x_pi_sum(X, pi), C.lifted_corner(X, pi)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.abs(a).max())
    assert C.nccs_bound_check(X, pi).passed


def test_padding_invariance():
    rng = np.random.default_rng(3)
    pi = C.PairPartition.from_one_based(5, ((1, 4), (2,), (5,)))
    X = C.random_open_family(pi, (2, 3, 1), 2, seed=5)
    Xp = X.padded(4)
    assert np.allclose(C.x_pi_sum(X, pi), C.x_pi_sum(Xp, pi), atol=1e-13)
    assert np.prod(C.q_factors(X, pi)) == pytest.approx(np.prod(C.q_factors(Xp, pi)))
    assert np.allclose(C.lifted_corner(X, pi), C.x_pi_sum(X, pi), atol=1e-12)


def test_theta_shared_fixed_vector():
    n, m = 4, 3
    rng = np.random.default_rng(2)
    perms = [np.eye(n)[rng.permutation(n)] for _ in range(6)]
    mats = [perms[2 * j] + perms[2 * j + 1] for j in range(m)]
    pi = C.PairPartition.from_one_based(3, ((1, 3),))
    A = np.array(mats, dtype=complex)
    mid = np.broadcast_to(np.array(mats[0], dtype=complex), (m, n, n))
    X = C.IndexedFamily([A, mid, A.transpose(0, 2, 1).copy()], (m,))
    cert = C.theta_control_certificate(X, pi, "shared_fixed_vector", f=np.ones(n), samples=50)
    assert cert.structure_ok and cert.theta == 1 and cert.passed
    bad = C.theta_control_certificate(X, pi, "shared_fixed_vector", f=np.eye(n)[0])
    assert not bad.structure_ok


def test_theta_unitary_tensor():
    from freelab.models import haar_unitary, rng_from
    n, N0, m = 2, 3, 3
    rng = np.random.default_rng(7)
    pi = C.PairPartition.from_one_based(4, ((1, 3), (2, 4)))
    mats, factors = [], {}
    for i in range(4):
        x = rng.standard_normal((m, n, n)) + 1j * rng.standard_normal((m, n, n))
        u = np.array([haar_unitary(N0, rng_from(i, j)) for j in range(m)])
        vals = np.array([np.kron(x[j], u[j]) for j in range(m)])
        l = pi.block_of(i)
        shape = [1, 1]
        shape[l] = m
        mats.append(np.broadcast_to(vals.reshape(tuple(shape) + vals.shape[1:]), (m, m) + vals.shape[1:]))
        factors[i] = (x, u)
    X = C.IndexedFamily(mats, (m, m), factors)
    cert = C.theta_control_certificate(X, pi, "unitary_tensor", samples=40)
    assert cert.structure_ok and cert.theta == n and cert.passed


def test_khintchine():
    rep = C.khintchine_check([np.eye(1)], 3, samples=40000, seed=1)
    assert rep.rhs == pytest.approx(15.0)
    assert abs(rep.estimate - 15.0) <= 4 * rep.stderr and rep.passed
    d = np.diag([1.0, 2.0, -0.5])
    rep1 = C.khintchine_check([d, np.eye(3)], 1, samples=40000, seed=2)
    assert abs(rep1.estimate - rep1.rhs) <= 4 * rep1.stderr
    rng = np.random.default_rng(0)
    Xs = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    assert C.khintchine_check(Xs, 2, samples=20000, seed=3).passed
