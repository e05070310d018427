"""Time the numba and numpy variants of each hot kernel, plus whole runs.

    python benchmarks/bench_kernels.py [--size N] [--repeat R] [--no-e2e]

Kernel timings call both variants in-process. The end-to-end section starts
one subprocess per backend so that ``MCMWC_NUMBA`` takes effect at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mcmwc import gf, kernels


def _cases(size, rng):
    a = rng.integers(0, 3, size).astype(np.int64)
    c = rng.integers(0, 3, size).astype(np.int64)
    arr = rng.integers(0, 2, size).astype(np.int16)
    q = kernels.lindley_np(arr.astype(np.int64), rng.integers(0, 2, size), 0)
    a_cum = np.cumsum(a)
    min_s = np.maximum(a_cum - rng.integers(0, 6, size), 0)
    width, length = 64, gf.DEFAULT_PAYLOAD_LEN
    coeffs = rng.integers(0, 256, (4, width), dtype=np.uint8)
    pays = rng.integers(0, 256, (width, length), dtype=np.uint8)
    basis_rows = rng.integers(0, 256, (width, width), dtype=np.uint8)

    def hist():
        return np.zeros(4096, np.int64), np.zeros(3, np.int64)

    def delays(fn):
        h, s = hist()
        fn(arr, q, 1, 0, 0, h, s)

    def intervals(fn):
        h, s = np.zeros(4096, np.int64), np.zeros(4, np.int64)
        fn(arr, q, 1, 0, 0, h, s)

    def feedback(fn):
        fn(a_cum, min_s, 0, 0, 4, np.empty(size, np.int64), np.zeros(3, np.int64))

    def fifo(fn):
        h, s = hist()
        fn(a, 1, 0, 0, h, s)

    def elimination(fn):
        rows = np.zeros((width, width), np.uint8)
        bp = np.zeros((width, length), np.uint8)
        piv = np.zeros(width, np.bool_)
        for k in range(width):
            fn(rows, bp, piv, basis_rows[k].copy(), pays[k].copy(), width, gf.MUL, gf.INV)

    return {
        "lindley": lambda fn: fn(a, c, 0),
        "accumulate_delays": delays,
        "accumulate_intervals": intervals,
        "feedback_window": feedback,
        "fifo_delays": fifo,
        "gf_combine": lambda fn: fn(coeffs, pays, gf.MUL),
        "reduce_insert (64 rows)": elimination,
    }


def bench_kernels(size, repeat):
    rng = np.random.default_rng(0)
    print(f"kernel timings, {size} slots, best of {repeat}")
    print(f"{'kernel':26s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, call in _cases(size, rng).items():
        base = name.split()[0]
        nb, npy = getattr(kernels, base + "_nb"), getattr(kernels, base + "_np")
        if nb is None:
            print(f"{name:26s} {'n/a':>10s}")
            continue
        call(nb)  # compile
        t_nb = min(timeit.repeat(lambda: call(nb), number=1, repeat=repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: call(npy), number=1, repeat=repeat)) * 1e3
        print(f"{name:26s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f}x")


E2E = r"""
import time
from mcmwc import metrics
from mcmwc.schemes import SchemeConfig, run_scheme
from mcmwc.topology import ArrivalProcess, sample_instance, GammaDist
inst = sample_instance(4, 20, GammaDist.degenerate(0.6), seed=1)
for fid, T in (("ideal", {T}), ("concrete", {Tc})):
    run_scheme(SchemeConfig("mc_mwc", fidelity=fid), inst, ArrivalProcess.bernoulli(0.5), 200)
    t = time.perf_counter()
    run = run_scheme(SchemeConfig("mc_mwc", fidelity=fid), inst, ArrivalProcess.bernoulli(0.5), T)
    print(fid, T, round(time.perf_counter() - t, 3), metrics.collect(run).mean_delay)
"""


def bench_end_to_end(slots):
    print(f"\nend-to-end mc_mwc, m=4, 80 receivers")
    print(f"{'backend':8s} {'fidelity':9s} {'slots':>8s} {'seconds':>8s} {'mean delay':>11s}")
    code = E2E.format(T=slots, Tc=max(slots // 500, 200))
    for flag, label in (("1", "numba"), ("0", "numpy")):
        env = dict(os.environ, MCMWC_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout
        for line in out.splitlines():
            fid, T, secs, delay = line.split()
            print(f"{label:8s} {fid:9s} {T:>8s} {float(secs):8.3f} {float(delay):11.4f}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--no-e2e", action="store_true")
    args = ap.parse_args(argv)
    bench_kernels(args.size, args.repeat)
    if not args.no_e2e:
        bench_end_to_end(args.slots)


if __name__ == "__main__":
    main()
