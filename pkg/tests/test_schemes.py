import os
import subprocess
import sys
from itertools import permutations

import numpy as np
import pytest
from scipy import integrate

from mcmwc import metrics, schemes
from mcmwc.schemes import SchemeConfig, SchemeError, run_scheme
from mcmwc.topology import ArrivalProcess, ChannelStats, SessionLayout, sample_instance

from helpers import homogeneous

BERN = ArrivalProcess.bernoulli


def test_allocation_two_by_two():
    layout = SessionLayout(2, [[0], [1]])
    stats = ChannelStats([[0.3, 0.5], [0.6, 0.2]])
    a = schemes.optimal_static_allocation(stats, layout)
    assert a.g == (1, 0) and a.objective == pytest.approx(1.1)


def test_allocation_single_session():
    layout = SessionLayout(1, [[0, 1, 2]])
    stats = ChannelStats([[0.4], [0.9], [0.7]])
    a = schemes.optimal_static_allocation(stats, layout)
    assert a.g == (0,) and a.objective == pytest.approx(0.4)


@pytest.mark.parametrize("seed", range(5))
def test_allocation_matches_brute_force_and_dominates_random(seed):
    r = np.random.default_rng(seed)
    m = int(r.integers(2, 7))
    layout, stats = sample_instance(m, 4, seed=seed)
    w = schemes.static_weights(stats, layout)
    opt = schemes.optimal_static_allocation(stats, layout)
    assert opt.objective == pytest.approx(schemes.brute_force_allocation(w).objective, abs=1e-12)
    for _ in range(1000):
        g = r.permutation(m)
        assert opt.objective >= schemes.allocation_objective(w, g) - 1e-12


def test_allocation_must_be_bijection():
    with pytest.raises(SchemeError):
        schemes.Allocation((0, 0))


def test_mc_mwc_capacity_examples():
    layout, stats = homogeneous(3, 4, 0.6)
    assert schemes.mc_mwc_capacity(stats, layout) == pytest.approx(0.6)
    two = SessionLayout(2, [[0], [1]])
    assert schemes.mc_mwc_capacity(ChannelStats([[0.5, 0.7], [0.6, 0.6]]), two) == pytest.approx(0.6)


def test_static_upper_dominates_and_matches_order_statistics(rng):
    n, m = 100, 10
    # E[max_j min_i U_ij] = int_0^1 1 - (1 - (1-x)^n)^m dx
    exact, _ = integrate.quad(lambda x: 1 - (1 - (1 - x) ** n) ** m, 0, 1, points=[0.01, 0.05])
    vals = []
    for s in range(300):
        layout, stats = sample_instance(m, n, seed=s)
        opt = schemes.optimal_static_allocation(stats, layout)
        w = schemes.static_weights(stats, layout)
        for h in range(m):
            up = schemes.static_capacity_upper(stats, layout, h)
            assert up >= w[h, opt.g[h]]
            vals.append(up)
    vals = np.array(vals)
    assert abs(vals.mean() - exact) < 4 * vals.std() / np.sqrt(vals.size)


def test_config_validation():
    with pytest.raises(SchemeError):
        SchemeConfig("nope")
    with pytest.raises(SchemeError):
        SchemeConfig("rlnc_static", block=0)
    with pytest.raises(SchemeError):
        SchemeConfig("fifo_bound", fidelity="concrete")


def test_run_errors():
    inst = homogeneous(2, 2, 0.5)
    with pytest.raises(SchemeError, match="horizon"):
        run_scheme(SchemeConfig(), inst, BERN(0.3), 0)
    layout, _ = inst
    with pytest.raises(SchemeError, match="mismatched"):
        run_scheme(SchemeConfig(), (layout, ChannelStats(np.full((4, 3), 0.5))), BERN(0.3), 10)


@pytest.mark.parametrize("kind", ["mc_mwc", "mwc_static"])
@pytest.mark.parametrize("fidelity", ["ideal", "concrete"])
def test_lossless_channel(kind, fidelity):
    run = run_scheme(SchemeConfig(kind, fidelity=fidelity, warmup=10), homogeneous(2, 3, 1.0),
                     BERN(0.7), 400, seed=3)
    rep = metrics.collect(run)
    if fidelity == "ideal":
        assert run.delay_stats[:, 2].max() <= 1
        assert (run.naks == 0).all()
        assert (rep.tail()[0][1:] == 0).all()
    else:
        # a uniformly drawn combination is dependent with probability about 1/256
        assert (run.naks <= 0.02 * run.horizon).all()
        assert rep.tail()[0][1] < 0.02


def test_dead_channel():
    run = run_scheme(SchemeConfig("mc_mwc", record=True, warmup=0), homogeneous(2, 2, 0.0),
                     BERN(0.5), 300, seed=1)
    tr = run.trace
    cum = tr["a"].sum(axis=0).cumsum()
    assert (tr["Q"] == cum[None, :]).all()
    assert run.delay_stats[:, 1].sum() == 0
    assert metrics.collect(run).empty_tail


def test_single_session_merge_is_identity():
    inst = sample_instance(1, 5, seed=4)
    a = run_scheme(SchemeConfig("mc_mwc", record=True), inst, BERN(0.3), 3000, seed=11)
    b = run_scheme(SchemeConfig("mwc_static", record=True), inst, BERN(0.3), 3000, seed=11)
    for key in ("a", "A", "Z", "c", "Q"):
        assert np.array_equal(a.trace[key], b.trace[key])
    assert np.array_equal(a.delay_hist, b.delay_hist)


def test_determinism():
    inst = sample_instance(3, 4, seed=2)
    runs = [run_scheme(SchemeConfig("mc_mwc"), inst, BERN(0.25), 5000, seed=5) for _ in range(2)]
    assert np.array_equal(runs[0].delay_hist, runs[1].delay_hist)
    assert np.array_equal(runs[0].final_Q, runs[1].final_Q)
    other = run_scheme(SchemeConfig("mc_mwc"), inst, BERN(0.25), 5000, seed=6)
    assert not np.array_equal(runs[0].delay_hist, other.delay_hist)


@pytest.mark.parametrize("kind", ["mc_mwc", "mwc_static", "rlnc_static", "rlnc_random", "fifo_bound"])
def test_conservation_every_scheme(kind):
    inst = sample_instance(3, 3, overlap_mode="shared", share_p=0.3, seed=8)
    run = run_scheme(SchemeConfig(kind, block=7), inst, BERN(0.2), 4000, seed=2)
    assert metrics.conservation_holds(run)
    c = run.conservation
    assert (c["arrivals"] == run.session_arrivals * run.session_pairs).all() or kind == "fifo_bound"


@pytest.mark.parametrize("kind,fidelity", [("mc_mwc", "ideal"), ("mwc_static", "ideal"),
                                           ("mc_mwc", "concrete"), ("mwc_static", "concrete")])
def test_queue_identity_and_ordered_delivery(kind, fidelity):
    inst = sample_instance(2, 3, seed=6)
    run = run_scheme(SchemeConfig(kind, fidelity=fidelity, record=True, warmup=0), inst,
                     BERN(0.2), 1500, seed=9)
    assert metrics.check_queue_identity(run) == 0
    for r in range(run.receiver_ids.size):
        recs = metrics.delay_records(run, r)
        idx = [x.index for x in recs]
        assert idx == sorted(set(idx))  # in order, no duplicates
        assert all(x.delay >= 0 for x in recs)
        assert all(x.session in run.receiver_sessions[r] for x in recs)
    if fidelity == "concrete":
        c = run.concrete
        assert c["integrity_failures"] == 0 and c["order_failures"] == 0
        assert c["concrete_exceeds_ideal"] == 0 and c["identity_violations"] == 0
        assert (run.safety_violations == 0).all()


def test_feedback_safety_and_window_bound():
    run = run_scheme(SchemeConfig("mc_mwc", record=True), homogeneous(2, 4, 0.6), BERN(0.45),
                     20_000, seed=4)
    tr = run.trace
    S = tr["A"][0][None, :] - tr["Q"]
    min_prev = np.concatenate(([0], S.min(axis=0)[:-1]))
    assert (tr["Z"][0] <= min_prev).all()
    assert run.safety_violations[0] == 0
    assert run.window_max[0] == (tr["A"][0] - tr["Z"][0]).max()


def test_fifo_follows_scalar_recursion():
    a = np.random.default_rng(0).choice([0, 2], p=[0.7, 0.3], size=(2000, 1)).astype(np.int16)
    run = run_scheme(SchemeConfig("fifo_bound", record=True, warmup=0), sample_instance(1, 1, seed=0),
                     a, 2000, seed=0)
    q, ref = 0, []
    for x in a[:, 0]:
        q = max(q + int(x) - 1, 0)
        ref.append(q)
    assert run.trace["Q"][0, 1:].tolist() == ref


@pytest.mark.parametrize("B", [10, 50, 200])
def test_rlnc_throughput_capped_by_worst_receiver(B):
    layout = SessionLayout(1, [[0, 1, 2]])
    stats = ChannelStats([[0.5], [0.7], [0.9]])
    run = run_scheme(SchemeConfig("rlnc_static", block=B, warmup=0), (layout, stats), BERN(0.6),
                     100_000, seed=1)
    thr = metrics.collect(run).throughput[0]
    assert thr <= 0.5 + 0.02
    assert thr > 0.40


def test_tracked_subset_disables_feedback():
    inst = homogeneous(2, 3, 0.6)
    run = run_scheme(SchemeConfig("mc_mwc", tracked=(0, 1)), inst, BERN(0.4), 2000, seed=0)
    assert run.receiver_ids.tolist() == [0, 1]
    assert not run.feedback[0] and run.naks[0] == -1
    assert run.session_pairs.tolist() == [2, 0]


def test_explicit_arrival_matrix_shape_checked():
    with pytest.raises(SchemeError):
        run_scheme(SchemeConfig(), homogeneous(2, 1, 0.5), np.zeros((9, 2), int), 10)


def test_numpy_backend_gives_identical_run():
    code = (
        "import numpy as np, mcmwc\n"
        "from mcmwc import schemes, topology\n"
        "inst = topology.sample_instance(2, 3, seed=1)\n"
        "r = schemes.run_scheme(schemes.SchemeConfig('mc_mwc', chunk=997), inst,"
        " topology.ArrivalProcess.bernoulli(0.3), 5000, seed=2)\n"
        "print(mcmwc.BACKEND, r.delay_hist.sum(axis=0)[:40].tolist(), r.final_Q.tolist(),"
        " r.interval_stats.tolist(), r.naks.tolist())\n"
    )
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, MCMWC_NUMBA=flag)
        out[flag] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout.split(" ", 1)
    assert out["0"][0] == "numpy"
    assert out["0"][1] == out["1"][1]
