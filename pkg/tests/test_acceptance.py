"""Acceptance criteria 1-12, each at its stated tolerance and time budget.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (shown even when
output capture is on) and then asserts the same verdict.
"""
import math
import time

import numpy as np
import pytest

from freelab import experiments as E
from freelab import paths
from freelab import schreier as S
from freelab import starops as so
from freelab.models import assemble, operator_norm, rng_from, sample

KESTEN2 = 2 * math.sqrt(3)


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def report(num, ok, detail, budget):
        elapsed = time.perf_counter() - t0
        ok = bool(ok) and elapsed <= budget
        with capsys.disabled():
            print(f"\nACCEPTANCE {num:>2} {'PASS' if ok else 'FAIL'} "
                  f"({elapsed:.1f}s / {budget:.0f}s) {detail}", flush=True)
        assert ok, detail

    return report


def _params(kind, **over):
    P = dict(E.KINDS[kind].params)
    P.update(over)
    return P, dict(E.KINDS[kind].tolerances)


def test_01_nb_decomposition(verdict):
    rng = rng_from(2024, 1)
    worst_free = worst_sample = 0.0
    for t in range(50):
        d, n, ell = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 7))
        raw = so.random_selfadjoint(d, n, seed=rng)
        # normalized so that every entry of A^ell is at most 1 in norm
        c = so.CoefficientFamily(raw.a / sum(np.linalg.norm(x, 2) for x in raw.a))
        P, T = _params("nb-decomp-check", ell=ell, N=50)
        out, _ = E.nb_decomp_check(c, P, T, (2024, t))
        worst_free = max(worst_free, out["free_residual"])
        worst_sample = max(worst_sample, out["sample_residual"])
    verdict(1, worst_free <= 1e-12 and worst_sample <= 1e-10,
            f"free residual {worst_free:.2e} (<=1e-12), N=50 residual {worst_sample:.2e} (<=1e-10)", 60)


def test_02_weingarten(verdict):
    P, T = _params("weingarten-check", k=3, N=8, samples=100_000, specs=50, unbalanced=100, table_k=5)
    out, v = E.weingarten_check(None, P, T, 2024)
    extra = {str(k): str(E.W.weingarten_table(k, N).gram_residual()) for k in range(1, 6) for N in (5, 13)}
    ok = all(x.passed for x in v) and set(extra.values()) == {"0"}
    n_ok = v[1].value
    verdict(2, ok, f"gram residuals all 0 for k<=5; MC {n_ok}/50 within 4 SE; "
                   f"unbalanced zero {out['unbalanced_zero']}/100", 120)


def test_03_trace_oracle(verdict):
    P, T = _params("trace-compare", ell=4, ms=[1, 2, 3, 4], N=10, samples=2000)
    out, v = E.trace_compare(so.kesten(2), P, T, 2024)
    rows = out["table"]
    zero = all(r["exact"] == 0.0 for r in rows if r["m"] in (1, 2))
    devs = ", ".join(f"m={r['m']}: {r['exact']:.5f} vs {r['mc_mean']:.5f}+-{r['se']:.5f}" for r in rows)
    verdict(3, zero and all(x.passed for x in v), devs, 600)


def test_04_free_norm_bracket(verdict):
    br = so.norm_bracket(so.kesten(2), tol=0.05)
    ok = br.width <= 0.05 and br.lower <= KESTEN2 <= br.upper
    verdict(4, ok, f"[{br.lower:.5f}, {br.upper:.5f}] width {br.width:.4f} vs 2*sqrt(3)", 60)


def test_05_strong_convergence(verdict):
    K = so.kesten(2)
    norms = [operator_norm(assemble(K, sample("unitary", 400, 2, (2024, s)))) for s in range(20)]
    inside = sum(abs(x - KESTEN2) <= 0.25 for x in norms)
    verdict(5, inside == 20, f"{inside}/20 in window, range [{min(norms):.4f}, {max(norms):.4f}]", 300)


def test_06_permutation_model(verdict):
    P, T = _params("schreier-lower", N=2000, p=4, samples=20, target=KESTEN2)
    out, v = E.schreier_lower(so.kesten(2), P, T, 2024)
    ok = all(x.passed for x in v)
    verdict(6, ok, f"{out['inside']}/20 within 0.3 (need 18); radius-4 witnesses on "
                   f"{out['witnesses']} samples, all certificates hold: {v[1].passed}", 600)


def test_07_nccs_corner(verdict):
    P, T = _params("nccs-check", trials=1000, include_example=True)
    out, v = E.nccs_check(None, P, T, 2024)
    verdict(7, all(x.passed for x in v),
            f"{out['instances']} instances, corner residual {out['corner_residual']:.2e}, "
            f"bound violations {out['bound_violations']}, max ratio {out['max_bound_ratio']:.3f}", 120)


def test_08_linearization(verdict):
    P, T = _params("linearize", polynomials=100, degree=4, n_max=2, N=25, chains=5, chain_N=25)
    out, v = E.linearize(None, P, T, 2024)
    verdict(8, all(x.passed for x in v),
            f"halving {out['step_residual']:.2e} (<=1e-8), chains {out['chain_residual']:.2e} (<=1e-6)", 300)


def test_09_ihara_bass(verdict):
    P, T = _params("ihara-bass", random=True, configs=20, N_min=10, N_max=60, n_max=2, d_max=3)
    out, v = E.ihara_bass(None, P, T, 2024)
    worst = max(r["residual"] for r in out["table"])
    verdict(9, all(x.passed for x in v),
            f"max residual {worst:.2e}, monotone in {out['monotone']}/20 (need 19)", 300)


def test_10_path_census(verdict):
    ok, cells, chi_ok = True, 0, True
    for m in range(1, 7):
        for r in paths.class_census(2, m):
            cells += 1
            ok &= r.coarse_count <= r.coarse_bound and r.fine_count <= r.fine_factor * r.coarse_count
            chi_ok &= r.chi >= 0
    verdict(10, ok and chi_ok, f"{cells} (v, e1) cells for m<=6, bounds hold: {ok}, chi>=0: {chi_ok}", 600)


def test_11_tangles(verdict):
    rate = S.tangle_free_rate(10 ** 4, 2, 3, samples=100, seed=2024)
    free = round(rate["rate"] * rate["samples"])
    c = so.random_general(2, 2, seed=2024)
    worst = 0.0
    for t in range(20):
        G = S.tangle_free_instance(12, 2, 3, seed=(2024, t))
        ops = S.centered_nb_operators(c, G, 4, 3)
        worst = max(worst, ops.identity_residual())
    verdict(11, free >= 95 and worst <= 1e-10,
            f"tangle-free {free}/100 at N=1e4, h=3 (need 95; mean tangled vertices "
            f"{rate['tangled_vertices_mean']:.1f}); decomposition residual {worst:.2e} on 20 instances", 600)


def test_12_tensor_legs(verdict):
    P, T = _params("tensor-legs", k=2, N=40, model="unitary")
    out, v = E.tensor_legs(so.kesten(2), P, T, 2024)
    verdict(12, all(x.passed for x in v),
            f"measured {out['measured']:.4f}, bracket [{out['lower']:.4f}, {out['upper']:.4f}] "
            f"midpoint {out['midpoint']:.4f}, commutator {out['commutator']:.1e}", 300)
