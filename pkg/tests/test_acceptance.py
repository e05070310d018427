"""End-to-end acceptance criteria A1-A8, each at its stated tolerance.

Every test emits one PASS/FAIL line (collected in the terminal summary) and
then asserts it. Several criteria are known to be out of reach for any
faithful implementation; they are run as stated and left red.
"""
import math
import time

import numpy as np
import pytest

from mcmwc import analysis, gf, metrics, schemes
from mcmwc.schemes import SchemeConfig, run_scheme
from mcmwc.topology import ArrivalProcess, ChannelStats, GammaDist, SessionLayout, sample_instance

from helpers import homogeneous

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

BERN = ArrivalProcess.bernoulli


def _fit(report):
    tail, counts = report.tail()
    return analysis.estimate_decay_rate(tail, counts)


def _first_session(layout):
    return tuple(layout.receiver_sets[0].tolist())


# ---------------------------------------------------------------------------
# A1


def test_a1_capacity_boundary(verdict):
    t0 = time.perf_counter()
    inst = homogeneous(4, 20, 0.6)
    T = 200_000
    run = run_scheme(SchemeConfig("mc_mwc"), inst, BERN(0.57), T, seed=11)
    rep = metrics.collect(run)
    qbar = float(run.q_mean.max())
    wmax = int(run.window_max.max())
    stable = rep.stable and qbar < 0.01 * T and wmax < 0.01 * T

    # Growth exponent of max Q in T, averaged over seeds so that a single
    # fluctuation cannot decide the verdict; superlinear needs exponent - 2 se > 1.
    horizons = [25_000, 50_000, 100_000, 200_000]
    logs = np.log(horizons)
    qmax = np.array([[run_scheme(SchemeConfig("mc_mwc"), inst, BERN(0.63), h, seed=s).q_max.max()
                      for h in horizons] for s in range(5)], dtype=float)
    per_seed = [np.polyfit(logs, np.log(row), 1)[0] for row in qmax]
    expo = float(np.polyfit(logs, np.log(qmax.mean(axis=0)), 1)[0])
    se = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed)))
    growth = qmax.mean(axis=0) / np.array(horizons)
    elapsed = time.perf_counter() - t0
    ok = stable and expo - 2 * se > 1.0 and elapsed < 60
    verdict("A1", ok,
            f"lambda=0.57 max time-avg Q={qbar:.1f}, window max={wmax} (stable={stable}); "
            f"lambda=0.63 growth exponent of max Q {expo:.3f} +- {se:.3f} over T={horizons} "
            f"(superlinear needs > 1 beyond 2 se); max Q / T = "
            + ", ".join(f"{g:.4f}" for g in growth) + f" (linear growth); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A2


def _capacity_chunked(m, n, rng, chunk=20_000):
    """mc_mwc_capacity for m disjoint sessions of n Uniform(0,1) receivers, in row chunks."""
    total, best = m * n, math.inf
    for s in range(0, total, chunk):
        rows = min(chunk, total - s)
        stats = ChannelStats(rng.random((rows, m)))
        layout = SessionLayout(m, [list(range(rows))] + [[0]] * (m - 1))
        best = min(best, schemes.mc_mwc_capacity(stats, layout))
    return best


def test_a2_scaling_law(verdict):
    t0 = time.perf_counter()
    ns = [25, 50, 100, 200, 400]
    R = 200
    cap = {n: [] for n in ns}
    static = {n: [] for n in ns}
    for n in ns:
        m = math.ceil(4.34 * math.log(n))
        for r in range(R):
            layout, stats = sample_instance(m, n, GammaDist.uniform(), seed=(n, r))
            cap[n].append(schemes.mc_mwc_capacity(stats, layout))
            static[n].append(schemes.optimal_static_allocation(stats, layout).objective / m)
    mean = {n: float(np.mean(cap[n])) for n in ns}
    se = {n: float(np.std(cap[n], ddof=1) / math.sqrt(R)) for n in ns}
    smean = [float(np.mean(static[n])) for n in ns]

    above = all(mean[n] >= 0.30 for n in ns)
    nondecr = all(mean[b] >= mean[a] - 2 * math.hypot(se[a], se[b]) for a, b in zip(ns, ns[1:]))
    ok_a = above and nondecr
    ok_b = all(x > y for x, y in zip(smean, smean[1:])) and smean[-1] < 0.05

    rng = np.random.default_rng(400)
    full = [_capacity_chunked(400, 400, rng) for _ in range(R)]
    cmean = float(np.mean(full))
    ok_c = cmean >= 0.45
    elapsed = time.perf_counter() - t0
    ok = ok_a and ok_b and ok_c and elapsed < 300
    verdict("A2", ok,
            "(a) log-rule capacity means "
            + ", ".join(f"n={n}:{mean[n]:.4f}+-{se[n]:.4f}" for n in ns)
            + f" (all >= 0.30: {above}, nondecreasing within 2 se: {nondecr}); "
            + "(b) static/m " + ", ".join(f"{x:.4f}" for x in smean) + f" ok={ok_b}; "
            + f"(c) m=n=400 capacity mean {cmean:.4f} (needs >= 0.45); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A3


def test_a3_delay_decay_rate(verdict):
    t0 = time.perf_counter()
    arr = BERN(0.54)
    base = analysis.asymptotic_rate(0.6, arr)
    parts, ok = [], True
    for m in (1, 2, 4):
        layout, stats = homogeneous(m, 100, 0.6)
        cfg = SchemeConfig("mc_mwc", tracked=_first_session(layout), hist_len=16_384)
        run = run_scheme(cfg, (layout, stats), arr, 10_000_000, seed=30 + m)
        tail, counts = metrics.collect(run).tail()
        fit = analysis.estimate_decay_rate(tail, counts)
        phi = analysis.rate_function([0.6] * m, arr, m).phi
        err = (fit.rate - phi) / phi
        good = abs(err) <= 0.10
        line = f"m={m}: fit {fit.rate:.6f} vs Phi {phi:.6f} ({err:+.1%})"
        if m > 1:
            lin = (fit.rate - m * base) / (m * base)
            good = good and abs(lin) <= 0.10
            line += f", vs {m}x slope {m * base:.6f} ({lin:+.1%})"
        # diagnostic only: slope once a k^(-3/2) prefactor is taken out
        k = np.arange(max(fit.k0, 1), fit.k_max + 1)
        adj = float(np.polyfit(k, -np.log(tail[k]) - 1.5 * np.log(k), 1)[0])
        parts.append(line + f", k in [{fit.k0},{fit.k_max}], prefactor-adjusted slope "
                     f"{adj:.6f} ({(adj - phi) / phi:+.1%})")
        ok = ok and good
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    verdict("A3", ok, "; ".join(parts) + f"; tolerance 10%; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A4


def test_a4_fifo_separation(verdict):
    t0 = time.perf_counter()
    arr = ArrivalProcess.batch([(0, 0.73), (2, 0.27)])
    pc = analysis.phi_const(arr)
    fifo = {}
    for m in (1, 2, 4):
        run = run_scheme(SchemeConfig("fifo_bound"), homogeneous(m, 1, 0.6), arr, 1_000_000,
                         seed=40 + m)
        fifo[m] = _fit(metrics.collect(run)).rate
    ok_fifo = all(r <= 1.1 * pc for r in fifo.values())

    layout, stats = homogeneous(4, 100, 0.6)
    cfg = SchemeConfig("mc_mwc", tracked=_first_session(layout), hist_len=16_384)
    run = run_scheme(cfg, (layout, stats), arr, 2_000_000, seed=44)
    mc = _fit(metrics.collect(run)).rate
    ok_mc = mc >= 2 * pc
    elapsed = time.perf_counter() - t0
    ok = ok_fifo and ok_mc and elapsed < 600
    verdict("A4", ok,
            f"phi_const={pc:.4f}; fifo fitted " + ", ".join(f"m={m}:{r:.4f}" for m, r in fifo.items())
            + f" (<= {1.1 * pc:.4f}: {ok_fifo}); mc_mwc m=4 (gamma=0.6) fitted {mc:.5f}, "
            + f"theory {analysis.rate_function([0.6] * 4, arr, 4).phi:.5f} "
            + f"(needs >= {2 * pc:.4f}; even lossless channels give "
            + f"{analysis.rate_function([1.0] * 4, arr, 4).phi:.4f}); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A5


def test_a5_load_sweep(verdict):
    t0 = time.perf_counter()
    T, n = 200_000, 100
    parts, ok = [], True
    for rho in (0.5, 0.7, 0.9):
        lam = BERN(0.6 * rho)
        d = {}
        for m in (1, 4):
            inst = homogeneous(m, n, 0.6)
            d[m] = metrics.collect(run_scheme(SchemeConfig("mc_mwc"), inst, lam, T, seed=50)).mean_delay
        rl = metrics.collect(run_scheme(SchemeConfig("rlnc_static", block=50), homogeneous(4, n, 0.6),
                                        lam, T, seed=50)).mean_delay
        ratio = d[4] / d[1]
        good = 0.15 <= ratio <= 0.4 and rl > d[4]
        ok = ok and good
        parts.append(f"rho={rho}: m=1 {d[1]:.2f}, m=4 {d[4]:.2f} (ratio {ratio:.3f}), rlnc {rl:.2f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 300
    verdict("A5", ok, "; ".join(parts) + f"; ratio window [0.15, 0.4]; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A6


def test_a6_decoder_fidelity(verdict):
    t0 = time.perf_counter()
    layout, stats = homogeneous(2, 5, 0.6)
    T = 85_000
    run = run_scheme(SchemeConfig("mc_mwc", fidelity="concrete"), (layout, stats), BERN(0.48), T,
                     seed=60)
    c = run.concrete
    events = int(c["events"])
    frac = c["noninnovative"] / events
    viol = int(run.safety_violations.sum())
    integ = int(c["integrity_failures"]) + int(c["order_failures"])
    elapsed = time.perf_counter() - t0
    ok = events >= 1_000_000 and frac <= 0.01 and integ == 0 and viol == 0 and c["decoded"] > 0 \
        and elapsed < 300
    verdict("A6", ok,
            f"{events} reception events, non-innovative fraction {frac:.5f} (<= 0.01), "
            f"{c['decoded']} packets decoded with {integ} payload mismatches, "
            f"{viol} safety violations; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A7


def _grid_sup(g, lam, m):
    """Dense-grid supremum of the Bernoulli-arrival objective, written out from scratch."""

    def obj(th):
        th = np.asarray(th, dtype=float)[:, None]
        arr = np.log((1 - lam) + lam * np.exp(-th[:, 0]))
        chan = np.log(g[None, :] * np.exp(th) + 1 - g[None, :]).sum(axis=1)
        return -m * arr - chan

    xs = np.linspace(-30, 30, 600_001)
    vals = obj(xs)
    i = int(np.argmax(vals))
    for _ in range(3):
        h = xs[1] - xs[0]
        xs = np.linspace(xs[i] - h, xs[i] + h, 20_001)
        vals = obj(xs)
        i = int(np.argmax(vals))
    return max(float(vals[i]), 0.0)


def test_a7_oracle_equivalences(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(70)
    alloc_bad = 0
    for _ in range(200):
        m = int(rng.integers(1, 8))
        layout, stats = sample_instance(m, int(rng.integers(1, 6)), seed=int(rng.integers(2**32)))
        fast = schemes.optimal_static_allocation(stats, layout)
        slow = schemes.brute_force_allocation(schemes.static_weights(stats, layout))
        alloc_bad += abs(fast.objective - slow.objective) > 1e-12

    rate_err = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 7))
        g = rng.uniform(0.05, 1.0, m)
        lam = float(rng.uniform(0.0, 1.0) * min(1.0, g.sum() / m))
        arr = analysis.MGFSpec.bernoulli(lam)
        ours = analysis.rate_function(g, arr, m).phi
        ref = _grid_sup(g, lam, m) if g.sum() - m * lam > analysis.DRIFT_TOL else 0.0
        rate_err = max(rate_err, abs(ours - ref))

    z_max, trials = 0.0, 20_000
    for _ in range(20):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(1, 40))
        lam = float(rng.uniform(0.2, 0.9) * m)
        p = analysis.bottleneck_probability(lam, m, n, lambda y: min(max(y, 0.0), 1.0))
        hits = (rng.random((trials, n, m)) < lam / m).all(axis=2).any(axis=1)
        sigma = math.sqrt(max(p * (1 - p), 1e-12) / trials)
        z_max = max(z_max, abs(hits.mean() - p) / sigma)
    elapsed = time.perf_counter() - t0
    ok = alloc_bad == 0 and rate_err <= 1e-6 and z_max <= 3 and elapsed < 120
    verdict("A7", ok,
            f"allocation mismatches {alloc_bad}/200; max |rate - grid| {rate_err:.2e} over 100; "
            f"bottleneck max |z| {z_max:.2f} over 20 points; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# A8


def test_a8_invariants(verdict):
    t0 = time.perf_counter()
    M = gf.MUL
    e = np.arange(256)
    x, y, z = np.meshgrid(e, e, e[::17], indexing="ij")
    field_ok = bool(
        np.array_equal(M, M.T)
        and (M[1] == e).all() and (M[0] == 0).all()
        and all(gf.gf_mul(gf.gf_inv(v), v) == 1 for v in range(1, 256))
        and all(gf.gf_mul_bitwise(u, v) == M[u, v] for u in range(256) for v in range(256))
        and np.array_equal(M[M[x, y], z], M[x, M[y, z]])
        and np.array_equal(M[x, y ^ z], M[x, y] ^ M[x, z]))
    identity_bad = tails_bad = cons_bad = 0
    runs = 0
    cases = [
        (SchemeConfig("mc_mwc", record=True), homogeneous(2, 3, 0.6), BERN(0.5)),
        (SchemeConfig("mc_mwc", fidelity="concrete", record=True), homogeneous(2, 3, 0.6), BERN(0.5)),
        (SchemeConfig("mwc_static", record=True), homogeneous(3, 2, 0.7), BERN(0.6)),
        (SchemeConfig("mwc_static", fidelity="concrete", record=True), homogeneous(3, 2, 0.7), BERN(0.6)),
        (SchemeConfig("mc_mwc", record=True),
         sample_instance(3, 4, overlap_mode="shared", share_p=0.3, seed=8),
         ArrivalProcess.batch([(0, 0.6), (1, 0.3), (2, 0.1)])),
    ]
    for seed in range(3):
        for cfg, inst, arr in cases:
            run = run_scheme(cfg, inst, arr, 4000, seed=seed)
            runs += 1
            identity_bad += metrics.check_queue_identity(run)
            tail, counts = metrics.collect(run).tail()
            tails_bad += int((np.diff(tail) > 0).any() or (np.diff(counts) > 0).any())
            cons_bad += not metrics.conservation_holds(run)
    for kind in ("rlnc_static", "fifo_bound"):
        run = run_scheme(SchemeConfig(kind), homogeneous(2, 3, 0.6), BERN(0.4), 20_000, seed=1)
        runs += 1
        tail, _ = metrics.collect(run).tail()
        tails_bad += int((np.diff(tail) > 0).any())
        cons_bad += not metrics.conservation_holds(run)
    elapsed = time.perf_counter() - t0
    ok = field_ok and identity_bad == 0 and tails_bad == 0 and cons_bad == 0 and elapsed < 60
    verdict("A8", ok,
            f"GF(2^8) axioms {'hold' if field_ok else 'BROKEN'}; over {runs} runs: "
            f"{identity_bad} Q=A-S violations, {tails_bad} non-monotone tails, "
            f"{cons_bad} conservation failures; {elapsed:.0f}s")
