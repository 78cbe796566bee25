"""Experiment pipelines behind the ``lab`` runner.

Every pipeline has the signature ``fn(coeffs, params, tol, seed) -> (outputs, verdicts)``.
``outputs`` is a JSON-ready dict (scalars and tables, a table being a list of
flat dicts) and ``verdicts`` is a list of ``Verdict``.  Parameter and
tolerance defaults live in :data:`KINDS`; module code receives them
explicitly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import linearization as lin
from . import nccs
from . import paths
from . import resolvent
from . import schreier
from . import starops as so
from . import weingarten as W
from .freegroup import ball
from .models import Projector, assemble, concentration_sweep, operator_norm, rng_from, sample
from .models import tensor_leg_model, tensor_norm


@dataclass
class Verdict:
    name: str
    passed: bool
    value: object = None
    tol: object = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Kind:
    fn: object
    params: dict
    tolerances: dict
    needs_coeffs: bool = True
    exact: bool = True  # replay must reproduce outputs bit for bit
    doc: str = ""


def _chk(name, value, tol, ok=None) -> Verdict:
    ok = value <= tol if ok is None else ok
    return Verdict(name, bool(ok), value, tol)


# ---------------------------------------------------------------------------


def free_norm(c, P, T, seed):
    br = so.norm_bracket(c, tol=T["width"], budget=so.Budget(seconds=P["seconds"]))
    out = {"lower": br.lower, "upper": br.upper, "width": br.width,
           "midpoint": br.midpoint, "achieved": br.achieved}
    v = [_chk("width", br.width, T["width"])]
    if P["expect"] is not None:
        e = P["expect"]
        v.append(Verdict("contains_expect", br.lower - T["contain"] <= e <= br.upper + T["contain"],
                         e, T["contain"]))
    return out, v


def trace_compare(c, P, T, seed):
    ell, N, S, model = P["ell"], P["N"], P["samples"], P["model"]
    rows, v = [], []
    for m in P["ms"]:
        exact = paths.expected_nb_trace(c, ell, m, N, model, grouped=model == "unitary")
        vals = np.empty(S, dtype=np.complex128)
        for s in range(S):
            B = paths.nb_operator(c, ell, m, sample(model, N, c.d, (seed, m, s)))
            vals[s] = np.trace(B) / B.shape[0]
        mean = complex(vals.mean())
        se = float(vals.real.std(ddof=1) / math.sqrt(S)) if S > 1 else math.inf
        dev = abs(mean.real - exact.real)
        rows.append({"m": m, "exact": exact.real, "mc_mean": mean.real, "se": se, "dev": dev})
        v.append(_chk(f"m={m}", dev, T["n_se"] * se + T["atol"]))
    return {"ell": ell, "N": N, "table": rows}, v


def ball_power_column(c, ell: int) -> dict:
    """``(A^ell)_{g, o}`` from powers of the compression to ``B_ell``.

    Walks of length ``ell`` from the unit never leave ``B_ell``, so the
    compression gives exact entries by a route independent of the tree
    transfer kernel.
    """
    M = lin.compression(lin.PolynomialOperator.from_family(c), ell)
    n = c.n
    col = np.zeros((M.shape[0], n), dtype=np.complex128)
    col[:n] = np.eye(n)  # the unit is the first ball element
    for _ in range(ell):
        col = M @ col
    words = ball(c.d, ell).words()
    return {g: col[k * n:(k + 1) * n] for k, g in enumerate(words)}


def nb_decomp_check(c, P, T, seed):
    ell = P["ell"]
    ref = ball_power_column(c, ell)
    free_res = 0.0
    seen = 0
    for m in range(ell + 1):
        for g, blk in so.nb_component(c, ell, m).items():
            free_res = max(free_res, float(np.max(np.abs(blk - ref[g]))))
            seen += 1
    if seen != len(ref):
        free_res = float("inf")
    out = {"free_residual": free_res}
    v = [_chk("free", free_res, T["free"])]
    if P["N"]:
        smp = sample(P["model"], P["N"], c.d, seed)
        A = assemble(c, smp).dense()
        tot = sum(paths.nb_operator(c, ell, m, smp) for m in range(ell + 1))
        res = float(np.max(np.abs(tot - np.linalg.matrix_power(A, ell))))
        out["sample_residual"] = res
        v.append(_chk("sample", res, T["sample"]))
    return out, v


def haar_batch(N: int, S: int, rng) -> np.ndarray:
    """``S`` Haar unitaries of size ``N`` via batched QR."""
    z = (rng.standard_normal((S, N, N)) + 1j * rng.standard_normal((S, N, N))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    dg = np.diagonal(r, axis1=1, axis2=2)
    return q * (dg / np.abs(dg))[:, None, :]


def random_balanced_spec(k: int, pool: int, rng) -> W.EntrySpec:
    """``k`` plain and ``k`` conjugate entries whose index multisets agree."""
    xs = [int(x) for x in rng.integers(0, pool, k)]
    ys = [int(y) for y in rng.integers(0, pool, k)]
    cx = [xs[i] for i in rng.permutation(k)]
    cy = [ys[i] for i in rng.permutation(k)]
    order = rng.permutation(2 * k)
    x = [(xs + cx)[i] for i in order]
    y = [(ys + cy)[i] for i in order]
    conj = [bool(i >= k) for i in order]
    return W.EntrySpec(tuple(x), tuple(y), tuple(conj))


def _unbalance(spec: W.EntrySpec, pool: int, rng) -> W.EntrySpec:
    x = list(spec.x)
    t = int(rng.integers(len(x)))
    x[t] = pool + int(rng.integers(3))  # fresh row index
    return W.EntrySpec(tuple(x), spec.y, spec.conj)


def weingarten_check(c, P, T, seed):
    N, S, k = P["N"], P["samples"], P["k"]
    res = {str(j): str(W.weingarten_table(j, max(P["N"], j)).gram_residual())
           for j in range(1, P["table_k"] + 1)}
    v = [Verdict("gram_exact", all(r == "0" for r in res.values()), res, "0")]
    rng = rng_from(seed, 0)
    Us = haar_batch(N, S, rng_from(seed, 1))
    pool = min(N, P["pool"])
    rows, worst = [], 0.0
    for t in range(P["specs"]):
        spec = random_balanced_spec(int(rng.integers(1, k + 1)), pool, rng)
        prod = np.ones(S, dtype=np.complex128)
        for x, y, cj in zip(spec.x, spec.y, spec.conj):
            col = Us[:, x, y]
            prod *= col.conj() if cj else col
        exact = W.unitary_entry_expectation(spec, N)
        se_r = float(prod.real.std(ddof=1) / math.sqrt(S))
        se_i = float(prod.imag.std(ddof=1) / math.sqrt(S))
        dr = abs(prod.real.mean() - float(exact))
        di = abs(prod.imag.mean())
        ok = dr <= T["n_se"] * se_r + T["atol"] and di <= T["n_se"] * se_i + T["atol"]
        worst = max(worst, dr / max(se_r, 1e-300))
        rows.append({"spec": t, "k": len(spec.x) // 2, "exact": str(exact),
                     "mc": float(prod.real.mean()), "se": se_r, "passed": bool(ok)})
    n_ok = sum(r["passed"] for r in rows)
    v.append(Verdict("mc_agreement", n_ok == len(rows), n_ok, len(rows)))
    zeros = 0
    for _ in range(P["unbalanced"]):
        spec = _unbalance(random_balanced_spec(int(rng.integers(1, k + 1)), pool, rng), pool, rng)
        zeros += (not W.is_balanced(spec)) and W.unitary_entry_expectation(spec, N) == 0
    v.append(Verdict("unbalanced_zero", zeros == P["unbalanced"], zeros, P["unbalanced"]))
    return {"gram_residuals": res, "worst_z": worst, "table": rows, "unbalanced_zero": zeros}, v


def path_census(c, P, T, seed):
    rows, ok, chi_ok = [], True, True
    for m in range(1, P["m"] + 1):
        for r in paths.class_census(P["d"], m):
            rows.append(paths.census_record(r))
            ok &= r.passed
            chi_ok &= r.chi >= 0
    return {"table": rows, "cells": len(rows)}, [Verdict("bounds", ok), Verdict("chi_nonnegative", chi_ok)]


def _nccs_instance(rng, P):
    r = int(rng.integers(2, P["r_max"] + 1))
    k = int(rng.integers(1, min(P["k_max"], r) + 1))
    pi = nccs.random_partition(r, k, rng)
    ms = tuple(int(x) for x in rng.integers(1, P["m_max"] + 1, k))
    D = int(rng.integers(1, P["D_max"] + 1))
    return pi, nccs.random_open_family(pi, ms, D, seed=rng)


def nccs_check(c, P, T, seed):
    rng = rng_from(seed, 0)
    worst_id, violations, worst_ratio = 0.0, 0, 0.0
    inst = [_nccs_instance(rng, P) for _ in range(P["trials"])]
    if P["include_example"]:
        pi = nccs.PairPartition.from_one_based(8, ((1, 5), (2, 7), (4, 8)))
        inst.append((pi, nccs.random_open_family(pi, (2, 2, 2), 2, seed=rng)))
    for pi, X in inst:
        a, b = nccs.x_pi_sum(X, pi), nccs.lifted_corner(X, pi)
        rel = float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))
        worst_id = max(worst_id, rel)
        rep = nccs.nccs_bound_check(X, pi, slack=T["slack"])
        violations += not rep.passed
        worst_ratio = max(worst_ratio, rep.ratio)
    return ({"instances": len(inst), "corner_residual": worst_id, "bound_violations": violations,
             "max_bound_ratio": worst_ratio},
            [_chk("corner_identity", worst_id, T["identity"]),
             Verdict("norm_bound", violations == 0, violations, T["slack"])])


def linearize(c, P, T, seed):
    d, N = P["d"], P["N"]
    rng = rng_from(seed, 0)
    rows = []
    for t in range(P["polynomials"]):
        deg = int(rng.integers(1, P["degree"] + 1))
        n = int(rng.integers(1, P["n_max"] + 1))
        Pt = lin.random_polynomial(d, n, deg, seed=rng)
        mats = sample("unitary", N, d, (seed, 1, t)).matrices()
        l = deg + deg % 2
        step = lin.halve_degree(lin.selfadjointize(Pt), l)
        r = abs(lin.norm_at(Pt, mats) - (lin.norm_at(step.Q, mats) ** 2 - step.theta))
        rows.append({"poly": t, "degree": deg, "n": n, "residual": r})
    chains = []
    for t in range(P["chains"]):
        deg = int(rng.integers(2, P["degree"] + 1))
        Pt = lin.random_polynomial(d, 1, deg, seed=rng)
        ch = lin.linearize(Pt)
        mats = sample("unitary", P["chain_N"], d, (seed, 2, t)).matrices()
        chains.append({"chain": t, "degree": deg, "steps": ch.m,
                       "residual": lin.chain_residuals(ch, mats)[-1]})
    step_worst = max((r["residual"] for r in rows), default=0.0)
    chain_worst = max((r["residual"] for r in chains), default=0.0)
    return ({"step_residual": step_worst, "chain_residual": chain_worst, "table": rows,
             "chains": chains},
            [_chk("halving", step_worst, T["step"]), _chk("chain", chain_worst, T["chain"])])


def schreier_lower(c, P, T, seed):
    target = P["target"]
    if target is None:
        target = so.norm_bracket(c, tol=0.01).midpoint
    rows, certs_ok = [], True
    for s in range(P["samples"]):
        G = schreier.random_graph(P["N"], c.d, (seed, s))
        meas = operator_norm(assemble(c, G.sample()), Projector(G.N), tol=1e-10)
        cert = schreier.lower_bound_certificate(c, G, P["p"], seed=s, measure=False)
        row = {"sample": s, "norm": meas, "witness": cert is not None,
               "certificate": cert.value if cert else None}
        if cert is not None:
            row["holds"] = meas >= cert.value * (1 - 1e-6) - 1e-12
            certs_ok &= row["holds"]
        rows.append(row)
    inside = sum(abs(r["norm"] - target) <= T["window"] for r in rows)
    need = math.ceil(T["fraction"] * len(rows))
    return ({"target": target, "inside": inside, "witnesses": sum(r["witness"] for r in rows),
             "table": rows},
            [Verdict("window", inside >= need, inside, need), Verdict("certificates", certs_ok)])


def alon_boppana(c, P, T, seed):
    rows, ok = [], True
    for s in range(P["samples"]):
        G = schreier.random_graph(P["N"], c.d, (seed, s))
        cert = schreier.alon_boppana(c, G)
        rows.append({"sample": s, "p": cert.p, "value": cert.value, "measured": cert.measured,
                     "moments": cert.moments, "holds": cert.holds})
        ok &= cert.holds
    return {"table": rows}, [Verdict("certificates", ok)]


def _ib_config(c, P, seed, t):
    if not P["random"]:
        return c, P["N"]
    rng = rng_from(seed, 0, t)
    d = int(rng.integers(1, P["d_max"] + 1))
    n = int(rng.integers(1, P["n_max"] + 1))
    N = int(rng.integers(P["N_min"], P["N_max"] + 1))
    return so.random_selfadjoint(d, n, seed=rng), N


def ihara_bass(c, P, T, seed):
    rows, ok, mono = [], True, 0
    for t in range(P["configs"]):
        ct, N = _ib_config(c, P, seed, t)
        smp = sample(P["model"], N, ct.d, (seed, 1, t))
        z = P["z"] if P["z"] is not None else resolvent.default_z_min(ct)
        reps = resolvent.depth_sweep(ct, smp, z, tuple(P["depths"]), z_min=min(z, resolvent.default_z_min(ct)))
        res = [r.residual for r in reps]
        top = reps[-1]
        good = top.residual <= T["residual"] + top.tail_bound
        is_mono = all(b <= max(a, T["noise"]) for a, b in zip(res, res[1:]))
        ok &= good
        mono += is_mono
        rows.append({"config": t, "d": ct.d, "n": ct.n, "N": N, "z": z,
                     "residual": top.residual, "tail_bound": top.tail_bound, "cond": top.cond,
                     "monotone": is_mono, **{f"residual_L{L}": r for L, r in zip(P["depths"], res)}})
    need = math.ceil(T["monotone_fraction"] * P["configs"])
    return ({"table": rows, "monotone": mono},
            [Verdict("residual", ok, max(r["residual"] for r in rows), T["residual"]),
             Verdict("monotone", mono >= need, mono, need)])


def tensor_legs(c, P, T, seed):
    legs = [c] * P["k"]
    br = so.tensor_norm_bracket(legs, tol=T["bracket"])
    op = tensor_leg_model(legs, P["N"], P["model"], seed)
    meas = tensor_norm(op)
    comm = 0.0
    for (key1, V1), (key2, V2) in itertools.combinations(op.generators.items(), 2):
        if key1[1] != key2[1]:
            comm = max(comm, float(abs(V1 @ V2 - V2 @ V1).max()))
    dev = abs(meas - br.midpoint)
    return ({"lower": br.lower, "upper": br.upper, "midpoint": br.midpoint, "measured": meas,
             "commutator": comm},
            [_chk("midpoint", dev, T["window"]), _chk("commute", comm, 0.0)])


def concentration(c, P, T, seed):
    p = math.inf if P["p"] is None else P["p"]
    sw = concentration_sweep(c, P["Ns"], p, P["samples"], P["model"], seed, T["factor"])
    rows = [{"N": r.N, "mean": r.mean, "std": r.std, "scale": r.scale, "passed": r.passed}
            for r in sw["reports"]]
    return ({"slope": sw["slope"], "expected": sw["expected"], "table": rows},
            [Verdict("slope", sw["passed"], sw["slope"], sw["expected"])])


KINDS = {
    "free-norm": Kind(free_norm, {"expect": None, "seconds": 60.0},
                      {"width": 0.05, "contain": 0.0}),
    "trace-compare": Kind(trace_compare, {"ell": 4, "ms": [1, 2, 3, 4], "N": 10, "samples": 2000,
                                          "model": "unitary"},
                          {"n_se": 4.0, "atol": 1e-12}, exact=False),
    "nb-decomp-check": Kind(nb_decomp_check, {"ell": 6, "N": 0, "model": "unitary"},
                            {"free": 1e-12, "sample": 1e-10}),
    "weingarten-check": Kind(weingarten_check, {"k": 3, "N": 8, "samples": 100_000, "specs": 50,
                                                "unbalanced": 50, "table_k": 5, "pool": 3},
                             {"n_se": 4.0, "atol": 1e-12}, needs_coeffs=False, exact=False),
    "path-census": Kind(path_census, {"d": 2, "m": 4}, {}, needs_coeffs=False),
    "nccs-check": Kind(nccs_check, {"trials": 1000, "r_max": 8, "k_max": 3, "m_max": 4, "D_max": 4,
                                    "include_example": True},
                       {"identity": 1e-12, "slack": 1e-10}, needs_coeffs=False),
    "linearize": Kind(linearize, {"d": 2, "degree": 4, "n_max": 2, "N": 25, "polynomials": 100,
                                  "chains": 5, "chain_N": 12},
                      {"step": 1e-8, "chain": 1e-6}, needs_coeffs=False),
    "schreier-lower": Kind(schreier_lower, {"N": 2000, "p": 4, "samples": 20, "target": None},
                           {"window": 0.3, "fraction": 0.9}),
    "alon-boppana": Kind(alon_boppana, {"N": 4096, "samples": 1}, {}),
    "ihara-bass": Kind(ihara_bass, {"N": 40, "configs": 1, "random": False, "d_max": 3, "n_max": 2,
                                    "N_min": 10, "N_max": 60, "depths": [10, 20, 40], "z": None,
                                    "model": "unitary"},
                       {"residual": 1e-8, "noise": 1e-13, "monotone_fraction": 0.95}),
    "tensor-legs": Kind(tensor_legs, {"k": 2, "N": 40, "model": "unitary"},
                        {"window": 0.5, "bracket": 0.1}),
    "concentration": Kind(concentration, {"Ns": [100, 200, 400], "p": None, "samples": 20,
                                          "model": "unitary"},
                          {"factor": 3.0}, exact=False),
}


def capacity_bytes(kind: str, P: dict, n: int = 1, d: int = 2) -> int:
    """Rough peak of dense allocations (complex128) for a configuration."""
    z = 16
    if kind == "nb-decomp-check":
        return 3 * z * (n * P["N"]) ** 2
    if kind == "trace-compare":
        return 3 * z * (n * P["N"]) ** 2
    if kind == "ihara-bass":
        N = P["N_max"] if P["random"] else P["N"]
        nn = P["n_max"] if P["random"] else n
        dd = P["d_max"] if P["random"] else d
        return 5 * z * (nn * N * 2 * dd) ** 2
    if kind == "weingarten-check":
        return 3 * z * P["samples"] * P["N"] ** 2
    if kind == "linearize":
        side = P["N"] * 4 * P["n_max"] * (2 * d) ** (P["degree"] // 2 + 1)
        return 2 * z * side * side // 4
    if kind == "tensor-legs":
        return z * n * P["N"] ** P["k"] * (2 * d * P["k"] + 2) * 3
    return 0

