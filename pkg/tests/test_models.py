import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freelab import models as M
from freelab import starops as so

KESTEN2 = 2 * math.sqrt(3)


@pytest.mark.parametrize("kind", M.KINDS)
def test_samples_valid_and_deterministic(kind):
    a = M.sample(kind, 30, 2, seed=7)
    b = M.sample(kind, 30, 2, seed=7)
    c = M.sample(kind, 30, 2, seed=8)
    assert a.validate()
    for x, y in zip(a.matrices(), b.matrices()):
        assert np.array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in zip(a.matrices(), c.matrices()))
    mats = a.matrices()
    for i in range(2):
        assert np.max(np.abs(mats[i] @ mats[i + 2] - np.eye(30))) <= 1e-12


def test_bad_arguments():
    with pytest.raises(ValueError):
        M.sample("gue", 4, 1, 0)
    with pytest.raises(ValueError):
        M.sample("unitary", 0, 1, 0)


def test_haar_second_moment():
    S, N = 20000, 8
    v = np.array([abs(M.haar_unitary(N, M.rng_from(3, s))[0, 0]) ** 2 for s in range(S)])
    assert abs(v.mean() - 1 / N) <= 4 * v.std() / math.sqrt(S)


def test_assembly_examples():
    c = so.kesten(1)
    op = M.assemble(c, M.sample("unitary", 50, 1, 1))
    w = np.linalg.eigvalsh(op.dense())
    assert w.min() >= -2 - 1e-12 and w.max() <= 2 + 1e-12
    z = M.assemble(so.zeros(2, 2), M.sample("unitary", 5, 2, 0))
    assert np.all(z.dense() == 0)
    h = M.assemble(so.random_selfadjoint(2, 2, seed=4), M.sample("orthogonal", 20, 2, 0)).dense()
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12


def test_operator_norm_examples():
    eye = so.CoefficientFamily(np.concatenate([np.eye(1)[None], np.zeros((2, 1, 1))]).astype(complex))
    assert M.operator_norm(M.assemble(eye, M.sample("unitary", 10, 1, 0))) == pytest.approx(1.0)
    val = M.operator_norm(M.assemble(so.kesten(2), M.sample("unitary", 500, 2, 0)))
    assert abs(val - KESTEN2) <= 0.3


def test_permutation_structured_matches_dense():
    c = so.random_general(2, 2, seed=9)
    smp = M.sample("permutation", 13, 2, 5)
    op = M.assemble(c, smp)
    dense = np.zeros((2 * 13, 2 * 13), dtype=complex)
    mats = smp.matrices()
    dense += np.kron(c.a[0], np.eye(13))
    for i in range(4):
        dense += np.kron(c.a[i + 1], mats[i])
    assert np.max(np.abs(op.dense() - dense)) <= 1e-13
    X = np.random.default_rng(0).standard_normal((2, 13)) + 0j
    assert np.allclose(op.apply_adjoint(X).reshape(-1), dense.conj().T @ X.reshape(-1))


def test_permutation_invariant_vector_and_projector():
    c = so.random_selfadjoint(2, 2, seed=3)
    op = M.assemble(c, M.sample("permutation", 40, 2, 2))
    f = np.array([1.0, -2.0 + 1j])
    X = np.outer(f, np.ones(40))
    A1 = c.a.sum(axis=0)
    assert np.max(np.abs(op.apply(X) - np.outer(A1 @ f, np.ones(40)))) <= 1e-12
    P = M.Projector(40)
    Pm = P.matrix(2)
    assert np.allclose(Pm @ Pm, Pm) and np.allclose(Pm, Pm.conj().T)
    A = op.dense()
    assert np.max(np.abs(A @ Pm - Pm @ A)) <= 1e-12
    exact = np.linalg.norm(A @ Pm, 2)
    assert M.operator_norm(op, P) == pytest.approx(exact, abs=1e-7)


def test_schatten_examples_and_sandwich():
    eye = np.eye(6)
    for p in (1, 2, 4, math.inf):
        assert M.schatten_norm(eye, p) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    T = rng.standard_normal((6, 6))
    assert M.schatten_norm(T, 2) == pytest.approx(np.linalg.norm(T) / math.sqrt(6))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 2.0, 3.0, 8.0]))
def test_sandwich_property(seed, p):
    op = M.assemble(so.random_general(2, 2, seed), M.sample("unitary", 6, 2, seed))
    nrm = M.operator_norm(op)
    assert M.schatten_norm(op, p) <= nrm * (1 + 1e-12)
    assert nrm <= M.schatten_lift(op, p) * (1 + 1e-12)


def test_mc_trace_moments():
    K = so.kesten(2)
    assert M.mc_trace_moment(K, 0, 10) == (1.0, 0.0)
    mean, se = M.mc_trace_moment(K, 2, 20, samples=200, seed=1)
    assert abs(mean - 4) <= 4 * se
    mean, se = M.mc_trace_moment(K, 4, 100, samples=60, seed=2)
    assert abs(mean - 28) <= 4 * se + 28 * 1e-4


def test_concentration():
    triv = so.CoefficientFamily(np.array([[[1.0]], [[0.0]], [[0.0]]], dtype=complex))
    rep = M.concentration_probe(triv, 20, math.inf, samples=5, star_norm=1.0)
    assert rep.std == 0 and rep.passed
    sweep = M.concentration_sweep(so.kesten(2), [100, 200, 400], math.inf, samples=20, seed=0)
    assert all(r.passed for r in sweep["reports"])
    assert sweep["passed"], sweep["slope"]


def test_tensor_legs_reduce_and_commute():
    K = so.kesten(2)
    op1 = M.tensor_leg_model([K], 12, seed=3)
    ref = M.assemble(K, M.sample("unitary", 12, 2, (3, 0)))
    assert np.max(np.abs(op1.matrix.toarray() - ref.dense())) <= 1e-13
    op2 = M.tensor_leg_model([K, K], 6, seed=1)
    for i in range(1, 5):
        for i2 in range(1, 5):
            A, B = op2.generators[(i, 0)], op2.generators[(i2, 1)]
            assert abs(A @ B - B @ A).max() == 0
