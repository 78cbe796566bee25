import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freelab import linearization as L
from freelab import starops as so
from freelab.freegroup import ball_size
from freelab.models import assemble, haar_unitary, rng_from, sample


def _mats(N, d, seed):
    return sample("unitary", N, d, seed).matrices()


def _u_plus_ustar():
    return L.PolynomialOperator(2, {(1, 2): np.eye(1), (4, 3): np.eye(1)})


def test_evaluate_matches_assembled_linear_family():
    c = so.random_general(2, 2, seed=4)
    smp = sample("unitary", 9, 2, 1)
    P = L.PolynomialOperator.from_family(c)
    assert np.allclose(P.evaluate(smp.matrices()), assemble(c, smp).dense())


def test_evaluate_is_homomorphic():
    mats = _mats(6, 2, 2)
    P = L.PolynomialOperator(2, {(1, 2, 3): np.eye(1)})
    want = mats[0] @ mats[1] @ mats[2]
    assert np.allclose(P.evaluate(mats), want)


def test_json_roundtrip():
    P = L.random_polynomial(2, 2, 3, seed=1)
    Q = L.PolynomialOperator.from_json(P.to_json())
    assert Q.terms.keys() == P.terms.keys()
    assert all(np.array_equal(P.terms[w], Q.terms[w]) for w in P.terms)


def test_selfadjointize_examples():
    mats = _mats(30, 2, 0)
    P = L.random_polynomial(2, 2, 2, seed=3, selfadjoint=False)
    S = L.selfadjointize(P)
    assert S.selfadjoint
    assert abs(L.norm_at(S, mats) - L.norm_at(P, mats)) <= 1e-10
    mono = L.PolynomialOperator(2, {(1, 2): np.array([[2.0, 1.0], [0.0, 1.0]])})
    assert L.norm_at(L.selfadjointize(mono), mats) == pytest.approx(np.linalg.norm(mono.terms[(1, 2)], 2))
    H = L.random_polynomial(2, 1, 2, seed=5)
    assert abs(L.norm_at(L.selfadjointize(H), mats) - L.norm_at(H, mats)) <= 1e-10


def test_halve_examples_and_errors():
    mats = _mats(25, 2, 1)
    P = _u_plus_ustar()
    res = L.halve_degree(L.selfadjointize(P))
    assert abs(L.norm_at(P, mats) - (L.norm_at(res.Q, mats) ** 2 - res.theta)) <= 1e-8
    one = L.PolynomialOperator(2, {(): np.eye(1)})
    r1 = L.halve_degree(one, 2)
    assert L.norm_at(r1.Q, mats) ** 2 - r1.theta == pytest.approx(1.0)
    with pytest.raises(ValueError):
        L.halve_degree(L.random_polynomial(2, 1, 3, seed=0))
    with pytest.raises(ValueError):
        L.halve_degree(L.random_polynomial(2, 1, 2, seed=0, selfadjoint=False))


def test_free_bracket_of_u_plus_ustar():
    lo, hi = L.free_norm_bracket(_u_plus_ustar(), L=8, k=4)
    assert lo <= 2 <= hi
    # B_8 meets each coset chain of <g1 g2> in at most 9 words: path spectrum
    assert lo == pytest.approx(2 * math.cos(math.pi / 10), abs=1e-9)


@pytest.mark.parametrize("deg,n", [(2, 1), (2, 2), (4, 1), (4, 2)])
def test_theta_and_psd_invariants(deg, n):
    P = L.random_polynomial(2, n, deg, seed=deg + n)
    S = L.selfadjointize(P)
    res = L.halve_degree(S)
    upper = L.free_norm_upper(S, 2)
    assert res.theta >= 0 and res.psd_min >= -1e-10
    assert res.a_tilde_norm <= upper
    assert res.theta <= res.ball_size * upper
    assert res.ball_size == ball_size(2, deg // 2)


def test_chain_bookkeeping():
    one_step = L.linearize(L.random_polynomial(2, 1, 2, seed=0))
    assert one_step.m == 1
    lin = L.linearize(L.random_polynomial(2, 1, 1, seed=0))
    assert lin.m == 0
    ch = L.linearize(L.random_polynomial(2, 1, 4, seed=0))
    assert ch.m == 2
    assert ch.paper_dims == [1, 2 * ball_size(2, 2), 2 * ball_size(2, 2) * 2 * ball_size(2, 1)]
    assert ch.paper_dims[1] == 34
    assert ch.paper_dims[-1] <= 2 * 4 * 4 ** 8
    assert ch.final.degree <= 1


def test_chain_roundtrip_at_finite_unitaries():
    mats = _mats(12, 2, 3)
    for deg in (3, 4):
        ch = L.linearize(L.random_polynomial(2, 1, deg, seed=deg))
        res = L.chain_residuals(ch, mats)
        assert max(res) <= 1e-6


def test_final_family_matches_final_operator():
    mats = _mats(10, 2, 4)
    ch = L.linearize(L.random_polynomial(2, 1, 2, seed=7))
    fam = ch.final_family()
    smp = sample("unitary", 10, 2, 4)
    assert abs(np.linalg.norm(assemble(fam, smp).dense(), 2) - L.norm_at(ch.final, mats)) <= 1e-10


def test_transfer_bounds():
    assert L.transfer_factor(2, 2) == 4096
    assert L.transfer_bounds(2, 0.0, d=2)["eps0"] == 0
    out = L.transfer_bounds(4, 1e-6, d=2)
    assert out["eps0"] <= out["theorem_bound"]
    with pytest.raises(ValueError):
        L.transfer_bounds(2, 1.0, d=2)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.floats(0, 1))
def test_transfer_recursion_below_theorem_factor(l, frac):
    d = 2
    eps = frac * (2 * d) ** (-l) / l ** 2
    out = L.transfer_bounds(l, eps, d=d)
    assert out["eps0"] <= out["theorem_bound"] * (1 + 1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 4]), st.integers(1, 2))
def test_halving_identity_property(seed, deg, n):
    P = L.random_polynomial(2, n, deg, seed=seed, density=0.5)
    mats = _mats(8, 2, seed)
    res = L.halve_degree(L.selfadjointize(P))
    assert abs(L.norm_at(P, mats) - (L.norm_at(res.Q, mats) ** 2 - res.theta)) <= 1e-8


def test_spectrum_probe():
    P = _u_plus_ustar()
    free = L.quadratic_spectrum_probe(P, -0.5, 0.5)
    assert free.gap is None
    mats = _mats(25, 2, 5)
    w = np.linalg.eigvalsh(P.evaluate(mats))
    # a gap of the finite spectrum must be certified exactly, and soundly
    gaps = np.diff(w)
    j = int(np.argmax(gaps))
    x, y = w[j], w[j + 1]
    pr = L.quadratic_spectrum_probe(P, x, y, mats=mats)
    assert pr.gap is not None
    lo, hi = pr.gap
    assert not np.any((w > lo + 1e-9) & (w < hi - 1e-9))
    # degenerate interval: exact distance from the top eigenvalue of f(P)
    pt = L.quadratic_spectrum_probe(P, 0.3, 0.3, mats=mats)
    assert pt.dist == pytest.approx(np.min(np.abs(w - 0.3)), abs=1e-6)
    # eps = 0 reproduces containment exactly: top of f(P) equals theta iff x is an eigenvalue
    p0 = L.quadratic_spectrum_probe(P, w[3], w[3], mats=mats)
    assert p0.dist == pytest.approx(0, abs=1e-6)
