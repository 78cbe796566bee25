import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freelab import starops as so
from freelab.freegroup import sphere
from oracles import word_sum_corner, word_sum_power


def test_kesten_moments_match_word_enumeration():
    K = so.kesten(2)
    counts = word_sum_power(K.a, 4, 2)
    assert counts[()][0, 0].real == 28
    assert so.free_moment(K, 2) == 4
    assert so.free_moment(K, 3) == 0
    assert so.free_moment(K, 4) == 28
    assert so.power_entry(K, 0, ()) == pytest.approx(np.eye(1))
    assert np.all(so.power_entry(K, 0, (1,)) == 0)
    assert np.all(so.power_entry(K, 2, (1, 1, 1)) == 0)


@pytest.mark.parametrize("d,n,ell,seed", [(2, 2, 4, 0), (1, 2, 5, 1), (2, 1, 3, 2), (3, 1, 3, 3)])
def test_power_entries_match_brute_force(d, n, ell, seed):
    c = so.random_general(d, n, seed)
    ref = word_sum_power(c.a, ell, d)
    bidx, E = so.power_entries(c, ell)
    for k in range(bidx.size):
        want = ref.get(bidx.word(k), np.zeros((n, n)))
        assert np.max(np.abs(E[k] - want)) < 1e-12


def test_power_entries_match_ball_operator_powers():
    c = so.random_selfadjoint(3, 2, seed=5)
    bidx, E = so.power_entries(c, 5)
    X = so.BallOperator(c, 5).power_column(5)
    assert np.max(np.abs(E - X)) < 1e-12


def test_backends_agree():
    from freelab import kernels
    c = so.random_general(2, 2, seed=9)
    bidx, E = so.power_entries(c, 3)
    a = kernels.transfer_step(E, bidx.left, c.a, bidx.star_table, bidx.size, bidx.size, backend="numba")
    b = kernels.transfer_step(E, bidx.left, c.a, bidx.star_table, bidx.size, bidx.size, backend="numpy")
    assert np.max(np.abs(a - b)) < 1e-14


def test_nb_component_examples():
    K = so.kesten(2)
    comp = so.nb_component(K, 2, 2)
    assert len(comp) == 12 and all(v[0, 0] == 1 for v in comp.values())
    assert so.nb_component(K, 2, 0)[()][0, 0] == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 6), st.integers(0, 10 ** 6))
def test_nb_decomposition_sums_to_power(d, n, ell, seed):
    c = so.random_selfadjoint(d, n, seed)
    bidx, E = so.power_entries(c, ell)
    for m in range(ell + 1):
        comp = so.nb_component(c, ell, m)
        for g, v in comp.items():
            assert np.max(np.abs(v - E[bidx.index(g)])) <= 1e-12
    assert sum(len(so.nb_component(c, ell, m)) for m in range(ell + 1)) == bidx.size


def test_c_entry_examples():
    K = so.kesten(2)
    c = so.random_selfadjoint(2, 2, seed=4)
    for i in range(1, 5):
        assert np.allclose(so.c_entry(c, 1, i, (i,)), c.a[i])
    assert np.all(so.c_entry(c, 3, 1, (2,)) == 0)
    ref = word_sum_corner(K.a, 3, 1, 2)
    assert so.c_entry(K, 3, 1, (1,))[0, 0] == ref[(1,)][0, 0]


@pytest.mark.parametrize("seed", range(3))
def test_c_entry_matches_filtered_enumeration(seed):
    c = so.random_general(2, 2, seed)
    for i in (1, 3):
        ref = word_sum_corner(c.a, 4, i, 2)
        bidx, C = so.c_entries_all(c, 4, i)
        for k in range(bidx.size):
            want = ref.get(bidx.word(k), np.zeros((2, 2)))
            assert np.max(np.abs(C[k] - want)) < 1e-12


def test_path_decomposition():
    K = so.kesten(2)
    assert so.path_decomposition_check(K, 4, (), ()) == 0
    assert so.path_decomposition_check(K, 3, (1,), ()) < 1e-12
    rng = np.random.default_rng(0)
    for t in range(20):
        d = int(rng.integers(1, 4))
        c = so.random_selfadjoint(d, 2, seed=t)
        k = int(rng.integers(1, 7))
        m = int(rng.integers(1, min(k, 4) + 1))
        words = sphere(d, m)
        g = words[int(rng.integers(len(words)))]
        cuts = [x for x in range(1, m) if rng.random() < 0.5]
        assert so.path_decomposition_check(c, k, g, cuts) <= 1e-10


def test_schatten_examples():
    K = so.kesten(2)
    assert so.schatten_norm_star(K, 4) == pytest.approx(28 ** 0.25, abs=1e-12)
    assert so.schatten_norm_star(so.zeros(2, 2), 4) == 0
    c = so.random_general(2, 2, seed=1)
    direct = math.sqrt(sum(np.linalg.norm(x) ** 2 for x in c.a) / c.n)
    assert so.schatten_norm_star(c, 2) == pytest.approx(direct, rel=1e-12)
    s = so.random_selfadjoint(2, 2, seed=3)
    for p in (2, 4, 6):
        assert so.schatten_norm_star(s, p) == pytest.approx(so.free_moment(s, p).real ** (1 / p), rel=1e-10)


def test_radial_paths_agree_with_general():
    K = so.kesten(2)
    for p in (2, 4, 8):
        assert so.haagerup_upper(K, p) == pytest.approx(so.haagerup_upper(K, p, fast=False), rel=1e-12)
        assert so.schatten_norm_star(K, p) == pytest.approx(so.schatten_norm_star(K, p, fast=False), rel=1e-12)
    g = so.CoefficientFamily(np.array([0.3, 1.0, 1.0]).reshape(3, 1, 1) * (1 + 1j))
    for p in (2, 6):
        assert so.haagerup_upper(g, p) == pytest.approx(so.haagerup_upper(g, p, fast=False), rel=1e-12)


def test_haagerup_and_truncation_examples():
    K = so.kesten(2)
    assert so.haagerup_upper(K, 2) == pytest.approx(4.0)
    assert so.haagerup_upper(so.zeros(2), 4) == 0
    with pytest.raises(ValueError):
        so.haagerup_upper(K, 3)
    assert so.truncated_norm_lower(K, 1) == pytest.approx(2.0)
    v = so.truncated_norm_lower(K, 10)
    assert 3.30 <= v <= 3.4642
    assert so.truncated_norm_lower(so.zeros(2), 3) == 0


def test_bracket_soundness_general():
    c = so.random_selfadjoint(2, 2, seed=7)
    lows = [so.truncated_norm_lower(c, L) for L in range(0, 5)]
    assert all(lows[t] <= lows[t + 1] + 1e-12 for t in range(4))
    ups = [so.haagerup_upper(c, p) for p in (2, 4, 6, 8)]
    assert min(ups) >= max(lows)
    for p in (2, 4, 6, 8):
        assert so.schatten_norm_star(c, p) <= min(ups) + 1e-12
    moms = [so.free_moment(c, 2 * k).real ** (1 / (2 * k)) for k in range(1, 5)]
    assert all(moms[t] <= moms[t + 1] + 1e-12 for t in range(3))


def test_exactness_rate():
    c = so.random_selfadjoint(2, 1, seed=11)
    best = so.truncated_norm_lower(c, 7)
    for l in (2, 3, 4, 5):
        assert so.truncated_norm_lower(c, l - 1) >= (1 - 2 / l) * best - 1e-12


def test_norm_bracket_examples():
    K = so.kesten(2)
    br = so.norm_bracket(K, 0.05)
    assert br.achieved and br.lower <= 2 * math.sqrt(3) <= br.upper and br.width <= 0.05
    for c0 in (0.0, 0.7, 2.5):
        a = np.zeros((5, 1, 1))
        a[0] = c0
        b = so.norm_bracket(so.CoefficientFamily(a))
        assert b.lower == pytest.approx(c0) and b.upper == pytest.approx(c0)
    r = so.random_selfadjoint(2, 2, seed=3)
    b = so.norm_bracket(r, 0.05, so.Budget(max_ball=20_000, max_dim=4000, seconds=5))
    assert b.lower <= b.upper


def test_non_selfadjoint_is_doubled():
    g = so.random_general(1, 2, seed=2)
    d = so.selfadjointize(g)
    assert d.selfadjoint and d.n == 4
    lo = so.truncated_norm_lower(g, 4)
    hi = so.haagerup_upper(g, 8)
    assert lo <= hi


@pytest.mark.parametrize("seed,d,k", [(0, 2, 3), (1, 3, 2), (2, 1, 5)])
def test_c_norm_bound(seed, d, k):
    c = so.random_selfadjoint(d, 2, seed)
    for i in range(1, 2 * d + 1, d):
        assert so.c_norm_bound_check(c, k, i)
    assert so.c_norm_bound_check(c, 1, 1)
    assert so.c_norm_bound_check(so.zeros(2), 2, 1, upper=0.0)


def test_tensor_legs():
    K = so.kesten(2)
    assert so.tensor_moment([K, K], 2) == pytest.approx(8)
    assert so.tensor_haagerup_upper([K], 6) == pytest.approx(so.haagerup_upper(K, 6))
    assert so.tensor_haagerup_upper([so.zeros(2), so.zeros(2)], 4) == 0
    c = so.random_selfadjoint(2, 1, seed=2)
    assert so.tensor_haagerup_upper([c], 6) == pytest.approx(so.haagerup_upper(c, 6))
    assert so.tensor_truncated_lower([c], 3) == pytest.approx(so.truncated_norm_lower(c, 3))
    lo = so.tensor_truncated_lower([c, c], 2)
    assert lo <= so.tensor_haagerup_upper([c, c], 6)
    # radial and general tensor moments agree
    assert so.tensor_moment([K, K], 4) == pytest.approx(so.tensor_moment([K, K], 4, fast=False))
    assert so.tensor_haagerup_upper([K, K], 4) == pytest.approx(
        so.tensor_haagerup_upper([K, K], 4, fast=False))


def test_json_roundtrip():
    c = so.random_selfadjoint(2, 2, seed=1)
    back = so.CoefficientFamily.from_json(c.to_json())
    assert np.array_equal(back.a, c.a)
    assert back.to_json() == c.to_json()


def test_structure_flags():
    b = so.bistochastic(2, 4, seed=0)
    assert b.selfadjoint and b.check_bistochastic()
    u = so.unitary_tensor(2, 2, 3, seed=0)
    assert u.selfadjoint and u.check_unitary_tensor()
    assert not so.random_selfadjoint(2, 3, seed=0).check_bistochastic()
