"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat R] [--csv out.csv]

Each kernel runs once to warm up (JIT compilation), then ``R`` times per
backend; the table reports the best time and checks the outputs agree.
With ``FREELAB_DISABLE_NUMBA=1`` only the numpy column is measured.
"""
import argparse
import csv
import sys
import time

import numpy as np

from freelab import _accel, kernels, schreier
from freelab import starops as so


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases():
    c2 = so.random_selfadjoint(2, 2, seed=0)
    c3 = so.random_selfadjoint(3, 1, seed=1)
    yield "transfer d=2 n=2 ell=9", lambda b: so.power_entries(c2, 9, backend=b)[1]
    yield "transfer d=3 n=1 ell=7", lambda b: so.power_entries(c3, 7, backend=b)[1]
    for N, h in ((20_000, 3), (100_000, 2)):
        nbr = schreier.random_graph(N, 2, 0).nbr
        yield f"ball ranks N={N} h={h}", lambda b, nbr=nbr, h=h: kernels.ball_cycle_ranks(nbr, h, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--csv")
    a = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _accel.NUMBA_AVAILABLE else [])
    rows = []
    print(f"default backend: {_accel.backend()}")
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases():
        res = {b: best_of(lambda: fn(b), a.repeat) for b in backends}
        t = {b: res[b][0] for b in backends}
        if len(backends) == 2:
            assert np.allclose(res["numpy"][1], res["numba"][1], atol=1e-12), name
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{name:<28}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>9.1f}x")
        rows.append({"kernel": name, **{f"{b}_s": t[b] for b in backends}, "speedup": speed})
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
