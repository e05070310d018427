"""Complete multicast schemes over a network instance.

``mc_mwc`` merges every session into one stream coded over all m channels.
``mwc_static`` runs a separate single-channel window code per session on its
allocated channel. ``rlnc_static`` / ``rlnc_random`` send block RLNC on an
optimal / random allocation, modeled at the erasure level. ``fifo_bound`` is
the unit-service FIFO queue that lower-bounds the delay of any static or
dynamic channel allocation.

The ideal engine processes slots in chunks: per-receiver virtual queues are a
Lindley recursion over the merged arrivals and the receiver's successes, so
whole chunks go through the compiled kernels. The concrete engine steps the
GF(2^8) encoder and decoders slot by slot and cross-checks them against the
counting model.
"""
import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import gf, kernels, window_code as wc
from .topology import ArrivalProcess, realize_counts

KINDS = ("mc_mwc", "mwc_static", "rlnc_static", "rlnc_random", "fifo_bound")
FIDELITIES = ("ideal", "concrete")
MIN_WARMUP = 1000
ARRIVAL_CHUNK = 1 << 20


class SchemeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Static allocation and capacities


@dataclass(frozen=True)
class Allocation:
    g: tuple  # g[h] = channel of session h (0-based)
    objective: float = float("nan")

    def __post_init__(self):
        if sorted(self.g) != list(range(len(self.g))):
            raise SchemeError(f"allocation {self.g} is not a bijection")


def static_weights(stats, layout):
    """w[h, j] = min over receivers of session h of gamma_{i,j}."""
    if any(s.size == 0 for s in layout.receiver_sets):
        raise SchemeError("empty receiver set")
    return np.stack([stats.gamma[s].min(axis=0) for s in layout.receiver_sets])


def allocation_objective(w, g):
    return float(sum(w[h, j] for h, j in enumerate(g)))


def optimal_static_allocation(stats, layout):
    w = static_weights(stats, layout)
    if w.shape[0] != w.shape[1]:
        raise SchemeError(f"need m sessions on m channels, got weights {w.shape}")
    rows, cols = linear_sum_assignment(w, maximize=True)
    g = tuple(int(c) for _, c in sorted(zip(rows, cols)))
    return Allocation(g, allocation_objective(w, g))


def brute_force_allocation(w):
    """Exhaustive search over all m! bijections (small m only)."""
    w = np.asarray(w, dtype=float)
    best = max(permutations(range(w.shape[0])), key=lambda g: allocation_objective(w, g))
    return Allocation(tuple(best), allocation_objective(w, best))


def random_allocation(m, rng, w=None):
    g = tuple(int(x) for x in rng.permutation(m))
    return Allocation(g, allocation_objective(w, g) if w is not None else float("nan"))


def mc_mwc_capacity(stats, layout):
    """(1/m) * min over all receivers of sum_j gamma_{i,j}."""
    return float(stats.gamma[layout.receivers].sum(axis=1).min() / layout.m)


def static_capacity_upper(stats, layout, h):
    return float(stats.gamma[layout.receiver_sets[h]].min(axis=0).max())


# ---------------------------------------------------------------------------
# Configuration and results


@dataclass
class SchemeConfig:
    kind: str = "mc_mwc"
    fidelity: str = "ideal"
    block: int = 50
    allocation: str = "optimal"
    warmup: int = None
    tracked: tuple = None  # receiver ids to follow; None = all (feedback needs all)
    record: bool = False
    hist_len: int = 4096
    chunk: int = 1 << 16
    payload_len: int = gf.DEFAULT_PAYLOAD_LEN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemeError(f"unknown scheme kind {self.kind!r}")
        if self.fidelity not in FIDELITIES:
            raise SchemeError(f"unknown decoder fidelity {self.fidelity!r}")
        if self.fidelity == "concrete" and self.kind not in ("mc_mwc", "mwc_static"):
            raise SchemeError(f"{self.kind} has no concrete decoder")
        if self.block < 1:
            raise SchemeError("rlnc block length must be >= 1")
        if self.allocation not in ("optimal", "random"):
            raise SchemeError(f"unknown allocation rule {self.allocation!r}")
        if self.hist_len < 2 or self.chunk < 1:
            raise SchemeError("hist_len must be >= 2 and chunk >= 1")


@dataclass
class SchemeRun:
    kind: str
    fidelity: str
    m: int
    horizon: int
    warmup: int
    seed: int
    allocation: Allocation
    session_rates: np.ndarray
    session_arrivals: np.ndarray  # (m,) total arrivals
    session_arrivals_post: np.ndarray  # (m,) arrivals in slots >= warmup
    session_pairs: np.ndarray  # (m,) tracked (receiver, session) pairs
    delay_hist: np.ndarray  # (m, H) pooled over pairs, post-warmup arrivals
    delay_stats: np.ndarray  # (m, 3) [sum, count, max]
    receiver_ids: np.ndarray  # (R,)
    receiver_group: np.ndarray  # (R,)
    receiver_delay: np.ndarray  # (R, 3) or None
    q_mean: np.ndarray  # (R,) post-warmup time average
    q_max: np.ndarray
    final_S: np.ndarray
    final_Q: np.ndarray
    interval_hist: np.ndarray  # (G, HI)
    interval_stats: np.ndarray  # (G, 4) [sum I, count, max I, sum K]
    group_sessions: list
    feedback: np.ndarray  # (G,) bool
    window_max: np.ndarray
    naks: np.ndarray
    safety_violations: np.ndarray
    final_A: np.ndarray
    final_Z: np.ndarray
    # per-session sums over tracked pairs at the horizon
    conservation: dict = field(default_factory=dict)
    concrete: dict = None
    trace: dict = None
    receiver_sessions: list = None  # (R,) sessions each tracked receiver subscribes to


# ---------------------------------------------------------------------------
# Helpers


def _arrival_history(arrivals, m, horizon, rng):
    """Per-session int16 arrays indexed by absolute slot (element 0 is slot 0, empty)."""
    if isinstance(arrivals, np.ndarray):
        a = np.asarray(arrivals)
        if a.shape != (horizon, m):
            raise SchemeError(f"explicit arrivals need shape {(horizon, m)}, got {a.shape}")
        if (a < 0).any():
            raise SchemeError("arrival counts must be nonnegative")
        hist = [np.concatenate(([0], a[:, h])).astype(np.int16) for h in range(m)]
        rates = a.mean(axis=0).astype(float)
        return hist, rates
    procs = list(arrivals) if isinstance(arrivals, (list, tuple)) else [arrivals] * m
    if len(procs) != m or not all(isinstance(p, ArrivalProcess) for p in procs):
        raise SchemeError(f"need one ArrivalProcess or a list of {m}")
    hist = []
    for p in procs:
        h = np.zeros(horizon + 1, dtype=np.int16)
        for s in range(1, horizon + 1, ARRIVAL_CHUNK):
            e = min(horizon, s + ARRIVAL_CHUNK - 1)
            h[s : e + 1] = p.sample(rng, e - s + 1)
        hist.append(h)
    return hist, np.array([p.rate for p in procs])


@dataclass
class _Group:
    sessions: list
    channels: list
    members: np.ndarray
    subs: list  # per member: sessions of this group the receiver subscribes to
    feedback: bool


def _build_groups(cfg, layout, alloc, tracked):
    sets = [set(s.tolist()) for s in layout.receiver_sets]
    if cfg.kind == "mc_mwc":
        spec = [(list(range(layout.m)), list(range(layout.m)))]
    elif cfg.kind == "fifo_bound":
        spec = [([h], []) for h in range(layout.m)]
    else:
        spec = [([h], [alloc.g[h]]) for h in range(layout.m)]
    groups = []
    for sessions, channels in spec:
        full = sorted(set().union(*(sets[h] for h in sessions)))
        mem = [i for i in full if tracked is None or i in tracked]
        subs = [[h for h in sessions if i in sets[h]] for i in mem]
        if cfg.kind == "fifo_bound":
            # one synthetic unit-service receiver per session
            mem, subs = [-1], [sessions]
        groups.append(_Group(sessions, channels, np.array(mem, dtype=np.int64), subs,
                             feedback=len(mem) == len(full) and cfg.kind != "fifo_bound"))
    return groups


def _default_warmup(cfg, stats, layout, alloc, rates, horizon):
    if cfg.kind == "mc_mwc":
        gap = mc_mwc_capacity(stats, layout) - float(np.mean(rates))
    elif cfg.kind == "fifo_bound":
        gap = 1.0 - float(np.max(rates))
    else:
        w = static_weights(stats, layout)
        gap = min(w[h, alloc.g[h]] - rates[h] for h in range(layout.m))
    warm = MIN_WARMUP if gap <= 0 else max(MIN_WARMUP, int(math.ceil(10.0 / gap)))
    return warm


def session_prefix_count(grp_cum, sess_before, sess_cum, sess_hist, n):
    """Packets of one session among the first ``n`` merged indices.

    Within a slot, packets are ordered by session index; ``sess_before[t]`` is
    the number of that slot's packets from lower-indexed sessions of the group.
    """
    if n <= 0:
        return 0
    s = int(np.searchsorted(grp_cum, n, side="left"))  # first slot with cum >= n
    off = n - int(grp_cum[s - 1])
    part = min(max(off - int(sess_before[s]), 0), int(sess_hist[s]))
    return int(sess_cum[s - 1]) + part


def _conservation(groups, arr_hist, member_index, final_S, final_D, m):
    arrivals = np.zeros(m, dtype=np.int64)
    delivered = np.zeros(m, dtype=np.int64)
    in_window = np.zeros(m, dtype=np.int64)
    indet = np.zeros(m, dtype=np.int64)
    for g, grp in enumerate(groups):
        stack = np.stack([arr_hist[h].astype(np.int64) for h in grp.sessions])
        grp_cum = np.cumsum(stack.sum(axis=0))
        before = np.cumsum(stack, axis=0) - stack
        cums = np.cumsum(stack, axis=1)
        for k, subs in enumerate(grp.subs):
            r = member_index[(g, k)]
            for h in subs:
                x = grp.sessions.index(h)
                tot = int(cums[x, -1])
                n_d = session_prefix_count(grp_cum, before[x], cums[x], stack[x], int(final_D[r]))
                n_s = session_prefix_count(grp_cum, before[x], cums[x], stack[x], int(final_S[r]))
                arrivals[h] += tot
                delivered[h] += n_d
                in_window[h] += n_s - n_d
                indet[h] += tot - n_s
    return {"arrivals": arrivals, "delivered": delivered, "in_window": in_window,
            "indeterminable": indet}


# ---------------------------------------------------------------------------
# Entry point


def run_scheme(cfg, instance, arrivals, horizon, seed=0):
    layout, stats = instance
    if horizon < 1:
        raise SchemeError("horizon must be >= 1")
    m = layout.m
    if stats.n_channels != m:
        raise SchemeError(f"mismatched instance: {stats.n_channels} channels for m={m} sessions")
    if layout.receivers.max() >= stats.n_receivers:
        raise SchemeError("mismatched instance: receiver id beyond the channel matrix")
    ss = np.random.SeedSequence(seed)
    rng_arr, rng_ch, rng_pay, rng_alloc, rng_key = [np.random.default_rng(s) for s in ss.spawn(5)]
    coeff_seed = int(rng_key.integers(0, 2**63))

    arr_hist, rates = _arrival_history(arrivals, m, horizon, rng_arr)

    alloc = None
    if cfg.kind in ("mwc_static", "rlnc_static", "rlnc_random"):
        w = static_weights(stats, layout)
        if cfg.kind == "rlnc_random" or (cfg.kind == "mwc_static" and cfg.allocation == "random"):
            alloc = random_allocation(m, rng_alloc, w)
        else:
            alloc = optimal_static_allocation(stats, layout)

    tracked = None if cfg.tracked is None else set(int(i) for i in cfg.tracked)
    groups = _build_groups(cfg, layout, alloc, tracked)
    if cfg.warmup is None:
        warm = _default_warmup(cfg, stats, layout, alloc, rates, horizon)
    else:
        warm = int(cfg.warmup)
    warm = max(0, min(warm, horizon // 2))

    ctx = dict(cfg=cfg, layout=layout, stats=stats, groups=groups, arr_hist=arr_hist,
               T=horizon, warm=warm, rng_ch=rng_ch, rng_pay=rng_pay, coeff_seed=coeff_seed)
    if cfg.kind in ("mc_mwc", "mwc_static"):
        engine = _run_concrete if cfg.fidelity == "concrete" else _run_ideal
    elif cfg.kind == "fifo_bound":
        engine = _run_fifo
    else:
        engine = _run_rlnc
    out = engine(**ctx)

    post = np.array([int(h[max(warm, 1):].sum()) for h in arr_hist], dtype=np.int64)
    total = np.array([int(h.sum()) for h in arr_hist], dtype=np.int64)
    pairs = np.zeros(m, dtype=np.int64)
    for grp in groups:
        for subs in grp.subs:
            for h in subs:
                pairs[h] += 1
    return SchemeRun(kind=cfg.kind, fidelity=cfg.fidelity, m=m, horizon=horizon, warmup=warm,
                     seed=seed, allocation=alloc, session_rates=rates, session_arrivals=total,
                     session_arrivals_post=post, session_pairs=pairs,
                     group_sessions=[g.sessions for g in groups],
                     receiver_sessions=[list(s) for grp in groups for s in grp.subs], **out)


def _empty_group_arrays(G, HI):
    return dict(interval_hist=np.zeros((G, HI), dtype=np.int64),
                interval_stats=np.zeros((G, 4), dtype=np.int64),
                feedback=np.zeros(G, dtype=bool),
                window_max=np.zeros(G, dtype=np.int64),
                naks=np.zeros(G, dtype=np.int64),
                safety_violations=np.zeros(G, dtype=np.int64),
                final_A=np.zeros(G, dtype=np.int64),
                final_Z=np.zeros(G, dtype=np.int64))


def _member_table(groups):
    index, ids, grp_of = {}, [], []
    for g, grp in enumerate(groups):
        for k, i in enumerate(grp.members):
            index[(g, k)] = len(ids)
            ids.append(int(i))
            grp_of.append(g)
    return index, np.array(ids, dtype=np.int64), np.array(grp_of, dtype=np.int64)


# ---------------------------------------------------------------------------
# Ideal window-code engine (chunked, compiled kernels)


def _run_ideal(cfg, layout, stats, groups, arr_hist, T, warm, rng_ch, **_):
    m, H = layout.m, cfg.hist_len
    index, ids, grp_of = _member_table(groups)
    R, G = ids.size, len(groups)
    delay_hist = np.zeros((m, H), dtype=np.int64)
    delay_stats = np.zeros((m, 3), dtype=np.int64)
    rx_delay = np.zeros((R, 3), dtype=np.int64)
    q_last = np.zeros(R, dtype=np.int64)
    t_last = np.zeros(R, dtype=np.int64)
    q_sum = np.zeros(R, dtype=np.float64)
    q_max = np.zeros(R, dtype=np.int64)
    out = _empty_group_arrays(G, H)
    grp_tot = []
    for grp in groups:
        tot = np.zeros(T + 1, dtype=np.int32)
        for h in grp.sessions:
            tot += arr_hist[h]
        grp_tot.append(tot)
    a_run = np.zeros(G, dtype=np.int64)
    z = np.zeros(G, dtype=np.int64)
    prev_min = np.zeros(G, dtype=np.int64)
    fb_carry = np.zeros((G, 3), dtype=np.int64)
    trace = None
    if cfg.record:
        trace = {"a": np.stack(arr_hist).astype(np.int64),
                 "A": np.zeros((G, T + 1), dtype=np.int64),
                 "Z": np.zeros((G, T + 1), dtype=np.int64),
                 "c": np.zeros((R, T + 1), dtype=np.int64),
                 "Q": np.zeros((R, T + 1), dtype=np.int64)}
    tmp_stats = np.zeros(3, dtype=np.int64)

    for t0 in range(1, T + 1, cfg.chunk):
        t1 = min(T, t0 + cfg.chunk - 1)
        C = t1 - t0 + 1
        post = max(0, min(C, t1 - warm + 1))  # slots of this chunk with t >= warm
        for g, grp in enumerate(groups):
            a = grp_tot[g][t0 : t1 + 1]
            a_cum = a_run[g] + np.cumsum(a, dtype=np.int64)
            a_run[g] = a_cum[-1]
            if grp.members.size == 0:
                continue
            gam = stats.gamma[np.ix_(grp.members, grp.channels)]
            c_all = np.ascontiguousarray(realize_counts(gam, C, rng_ch).T)
            max_q = np.zeros(C, dtype=np.int64) if grp.feedback else None
            for k in range(grp.members.size):
                r = index[(g, k)]
                c = c_all[k]
                q = kernels.lindley(a, c, int(q_last[r]))
                q_last[r] = q[-1]
                if post:
                    tail = q[C - post :]
                    q_sum[r] += float(tail.sum())
                    q_max[r] = max(q_max[r], int(tail.max()))
                if max_q is not None:
                    np.maximum(max_q, q, out=max_q)
                old = int(t_last[r])
                for h in grp.subs[k]:
                    tmp_stats[:] = 0
                    kernels.accumulate_delays(arr_hist[h], q, t0, old, warm, delay_hist[h], tmp_stats)
                    delay_stats[h, 0] += tmp_stats[0]
                    delay_stats[h, 1] += tmp_stats[1]
                    delay_stats[h, 2] = max(delay_stats[h, 2], tmp_stats[2])
                    rx_delay[r, 0] += tmp_stats[0]
                    rx_delay[r, 1] += tmp_stats[1]
                    rx_delay[r, 2] = max(rx_delay[r, 2], tmp_stats[2])
                t_last[r] = kernels.accumulate_intervals(grp_tot[g], q, t0, old, warm,
                                                         out["interval_hist"][g],
                                                         out["interval_stats"][g])
                if trace is not None:
                    trace["c"][r, t0 : t1 + 1] = c
                    trace["Q"][r, t0 : t1 + 1] = q
            if max_q is not None:
                z_out = np.empty(C, dtype=np.int64)
                min_s = a_cum - max_q
                zz, pm = kernels.feedback_window(a_cum, min_s, int(z[g]), int(prev_min[g]),
                                                 len(grp.channels), z_out, fb_carry[g])
                z[g], prev_min[g] = zz, pm
                if trace is not None:
                    trace["Z"][g, t0 : t1 + 1] = z_out
            if trace is not None:
                trace["A"][g, t0 : t1 + 1] = a_cum

    for g, grp in enumerate(groups):
        out["feedback"][g] = grp.feedback
        out["final_A"][g] = a_run[g]
        if grp.feedback:
            out["final_Z"][g] = z[g]
            out["naks"][g], out["safety_violations"][g], out["window_max"][g] = fb_carry[g]
        else:
            out["final_Z"][g] = -1
            out["naks"][g] = out["safety_violations"][g] = out["window_max"][g] = -1
    final_A = np.array([a_run[grp_of[r]] for r in range(R)], dtype=np.int64)
    final_S = final_A - q_last
    final_D = np.array([grp_tot[grp_of[r]][: t_last[r] + 1].sum() for r in range(R)], dtype=np.int64)
    n_post = T - max(warm, 1) + 1
    if trace is not None:
        trace["decode_log"] = [[0] + (np.flatnonzero(trace["Q"][r, 1:] == 0) + 1).tolist()
                               for r in range(R)]
    out.update(delay_hist=delay_hist, delay_stats=delay_stats, receiver_ids=ids,
               receiver_group=grp_of, receiver_delay=rx_delay, q_mean=q_sum / n_post,
               q_max=q_max, final_S=final_S, final_Q=q_last,
               conservation=_conservation(groups, arr_hist, index, final_S, final_D, m),
               trace=trace)
    return out


# ---------------------------------------------------------------------------
# Concrete GF(2^8) engine (slot by slot)


def _run_concrete(cfg, layout, stats, groups, arr_hist, T, warm, rng_ch, rng_pay, coeff_seed, **_):
    m, H, L = layout.m, cfg.hist_len, cfg.payload_len
    index, ids, grp_of = _member_table(groups)
    R, G = ids.size, len(groups)
    delay_hist = np.zeros((m, H), dtype=np.int64)
    delay_stats = np.zeros((m, 3), dtype=np.int64)
    rx_delay = np.zeros((R, 3), dtype=np.int64)
    q_sum = np.zeros(R, dtype=np.float64)
    q_max = np.zeros(R, dtype=np.int64)
    zero_at = np.zeros((R, T + 1), dtype=np.int8)  # 1 where Q == 0 ("is a decoding moment")
    zero_at[:, 0] = 1
    final_S = np.zeros(R, dtype=np.int64)
    final_Q = np.zeros(R, dtype=np.int64)
    final_D = np.zeros(R, dtype=np.int64)
    out = _empty_group_arrays(G, H)
    chk = dict(events=0, noninnovative=0, ideal_innovative=0, pair_slots=0, deficit_slots=0,
               ideal_gap_max=0, concrete_exceeds_ideal=0, identity_violations=0,
               integrity_failures=0, order_failures=0, decoded=0, ops=0)
    trace = None
    if cfg.record:
        trace = {"a": np.stack(arr_hist).astype(np.int64),
                 "A": np.zeros((G, T + 1), dtype=np.int64),
                 "Z": np.zeros((G, T + 1), dtype=np.int64),
                 "c": np.zeros((R, T + 1), dtype=np.int64),
                 "Q": np.zeros((R, T + 1), dtype=np.int64),
                 "S": np.zeros((R, T + 1), dtype=np.int64)}

    top = H - 1
    for g, grp in enumerate(groups):
        n_ch = len(grp.channels)
        members = grp.members
        enc = wc.EncoderState(n_ch, coeff_seed=coeff_seed + g, payload_len=L)
        decs = [wc.DecoderState("concrete", coeff_seed=coeff_seed + g, payload_len=L)
                for _ in members]
        s_ideal = np.zeros(members.size, dtype=np.int64)
        src = [None]  # merged index -> (session, arrival slot, payload)
        gam = stats.gamma[np.ix_(members, grp.channels)] if members.size else None
        prev_min = 0
        win_max = 0
        viol = 0
        for t0 in range(1, T + 1, cfg.chunk):
            t1 = min(T, t0 + cfg.chunk - 1)
            if members.size:
                succ = rng_ch.random((t1 - t0 + 1, members.size, n_ch)) < gam
            for t in range(t0, t1 + 1):
                if enc.Z > prev_min:
                    viol += 1
                batch = []
                for h in grp.sessions:
                    for _ in range(int(arr_hist[h][t])):
                        p = gf.random_payloads(rng_pay, 1, L)[0]
                        src.append((h, t, p))
                        batch.append(p)
                wc.encoder_ingest(enc, np.array(batch, dtype=np.uint8).reshape(-1, L))
                if enc.t != t:
                    raise wc.WindowCodeError("encoder clock out of step")
                win_max = max(win_max, enc.window_size)
                pkts = wc.encode_slot(enc)
                for k, dec in enumerate(decs):
                    r = index[(g, k)]
                    row = succ[t - t0, k]
                    got = [pkts[j] for j in np.flatnonzero(row)]
                    c_t = len(got)
                    s_prev, innov_prev = dec.S, dec.innovative
                    ideal_gain = min(c_t, enc.A - s_prev)
                    s_ideal[k] += min(c_t, enc.A - s_ideal[k])
                    wc.decoder_receive_concrete(dec, got, A_t=enc.A, t=t)
                    innov = dec.innovative - innov_prev
                    chk["events"] += c_t
                    chk["ideal_innovative"] += ideal_gain
                    chk["noninnovative"] += max(ideal_gain - innov, 0)
                    chk["pair_slots"] += 1
                    if dec.S - s_prev < ideal_gain:
                        chk["deficit_slots"] += 1
                    if dec.S > s_ideal[k]:
                        chk["concrete_exceeds_ideal"] += 1
                    chk["ideal_gap_max"] = max(chk["ideal_gap_max"], int(s_ideal[k] - dec.S))
                    if dec.A != enc.A or dec.Q != dec.A - dec.S or dec.S > dec.A:
                        chk["identity_violations"] += 1
                    q = dec.Q
                    if t >= warm:
                        q_sum[r] += q
                        q_max[r] = max(q_max[r], q)
                    if trace is not None:
                        trace["c"][r, t] = c_t
                        trace["Q"][r, t] = q
                        trace["S"][r, t] = dec.S
                    expected = dec.delivered + 1
                    decoded = wc.try_decode(dec, enc.A, t)
                    if decoded is None:
                        continue
                    zero_at[r, t] = 1
                    subs = grp.subs[k]
                    for pk in decoded:
                        if pk.index != expected:
                            chk["order_failures"] += 1
                        expected = pk.index + 1
                        h, s, p = src[pk.index]
                        if not np.array_equal(p, pk.payload):
                            chk["integrity_failures"] += 1
                        chk["decoded"] += 1
                        if h not in subs or s < warm:
                            continue
                        d = t - s
                        delay_hist[h, d if d < top else top] += 1
                        delay_stats[h, 0] += d
                        delay_stats[h, 1] += 1
                        delay_stats[h, 2] = max(delay_stats[h, 2], d)
                        rx_delay[r, 0] += d
                        rx_delay[r, 1] += 1
                        rx_delay[r, 2] = max(rx_delay[r, 2], d)
                if trace is not None:
                    trace["A"][g, t] = enc.A
                    trace["Z"][g, t] = enc.Z
                if decs:
                    prev_min = min(d.S for d in decs)
                if grp.feedback:
                    wc.feedback_round(enc, decs)
        out["feedback"][g] = grp.feedback
        out["final_A"][g] = enc.A
        out["final_Z"][g] = enc.Z if grp.feedback else -1
        out["naks"][g] = enc.naks if grp.feedback else -1
        out["window_max"][g] = win_max if grp.feedback else -1
        out["safety_violations"][g] = viol if grp.feedback else -1
        chk["ops"] += sum(d.ops for d in decs)
        grp_tot = np.zeros(T + 1, dtype=np.int32)
        for h in grp.sessions:
            grp_tot += arr_hist[h]
        for k in range(members.size):
            r = index[(g, k)]
            q = 1 - zero_at[r, 1:]
            kernels.accumulate_intervals(grp_tot, q, 1, 0, warm, out["interval_hist"][g],
                                         out["interval_stats"][g])
        for k, dec in enumerate(decs):
            r = index[(g, k)]
            final_S[r], final_Q[r], final_D[r] = dec.S, dec.Q, dec.delivered

    n_post = T - max(warm, 1) + 1
    if trace is not None:
        trace["decode_log"] = [np.flatnonzero(zero_at[r]).tolist() for r in range(R)]
    out.update(delay_hist=delay_hist, delay_stats=delay_stats, receiver_ids=ids,
               receiver_group=grp_of, receiver_delay=rx_delay, q_mean=q_sum / n_post,
               q_max=q_max, final_S=final_S, final_Q=final_Q,
               conservation=_conservation(groups, arr_hist, index, final_S, final_D, m),
               concrete=chk, trace=trace)
    return out


# ---------------------------------------------------------------------------
# Block RLNC at the erasure level


def _run_rlnc(cfg, layout, stats, groups, arr_hist, T, warm, rng_ch, **_):
    m, H, B = layout.m, cfg.hist_len, cfg.block
    index, ids, grp_of = _member_table(groups)
    R, G = ids.size, len(groups)
    delay_hist = np.zeros((m, H), dtype=np.int64)
    delay_stats = np.zeros((m, 3), dtype=np.int64)
    out = _empty_group_arrays(G, 2)
    final_D = np.zeros(R, dtype=np.int64)
    in_win = np.zeros(R, dtype=np.int64)
    cons = {k: np.zeros(m, dtype=np.int64)
            for k in ("arrivals", "delivered", "in_window", "indeterminable")}
    for g, grp in enumerate(groups):
        (h,) = grp.sessions
        a_cum = np.cumsum(arr_hist[h], dtype=np.int64)
        pslot = np.repeat(np.arange(T + 1, dtype=np.int64), arr_hist[h].astype(np.int64))
        n_rx = grp.members.size
        state = np.zeros(3, dtype=np.int64)
        progress = np.zeros(max(n_rx, 1), dtype=np.int64)
        delivered = np.zeros(max(n_rx, 1), dtype=np.int64)
        if n_rx:
            gam = stats.gamma[np.ix_(grp.members, grp.channels)]
            for t0 in range(1, T + 1, cfg.chunk):
                t1 = min(T, t0 + cfg.chunk - 1)
                c = np.ascontiguousarray(realize_counts(gam, t1 - t0 + 1, rng_ch))
                kernels.rlnc_session(a_cum, pslot, c, t0, B, warm, state, progress, delivered,
                                     delay_hist[h], delay_stats[h])
        out["final_A"][g] = a_cum[-1]
        out["final_Z"][g] = -1
        out["naks"][g] = out["safety_violations"][g] = out["window_max"][g] = -1
        for k in range(n_rx):
            r = index[(g, k)]
            done = state[1] == 1 and progress[k] >= B
            final_D[r] = state[0] * B + (B if done else 0)
            in_win[r] = B if state[1] == 1 and not done else 0
            tot = int(a_cum[-1])
            cons["arrivals"][h] += tot
            cons["delivered"][h] += final_D[r]
            cons["in_window"][h] += in_win[r]
            cons["indeterminable"][h] += tot - final_D[r] - in_win[r]
    final_A = np.array([out["final_A"][grp_of[r]] for r in range(R)], dtype=np.int64)
    out.update(delay_hist=delay_hist, delay_stats=delay_stats, receiver_ids=ids,
               receiver_group=grp_of, receiver_delay=None,
               q_mean=np.full(R, np.nan), q_max=np.full(R, -1, dtype=np.int64),
               final_S=final_D + in_win, final_Q=final_A - final_D - in_win,
               conservation=cons)
    return out


# ---------------------------------------------------------------------------
# Unit-service FIFO


def _run_fifo(cfg, layout, stats, groups, arr_hist, T, warm, **_):
    m, H = layout.m, cfg.hist_len
    index, ids, grp_of = _member_table(groups)
    R, G = ids.size, len(groups)
    delay_hist = np.zeros((m, H), dtype=np.int64)
    delay_stats = np.zeros((m, 3), dtype=np.int64)
    out = _empty_group_arrays(G, 2)
    q_end = np.zeros(R, dtype=np.int64)
    q_sum = np.zeros(R, dtype=np.float64)
    q_max = np.zeros(R, dtype=np.int64)
    cons = {k: np.zeros(m, dtype=np.int64)
            for k in ("arrivals", "delivered", "in_window", "indeterminable")}
    trace = {"a": np.stack(arr_hist).astype(np.int64), "Q": np.zeros((R, T + 1), dtype=np.int64)} \
        if cfg.record else None
    for g, grp in enumerate(groups):
        (h,) = grp.sessions
        r = index[(g, 0)]
        q = 0
        for t0 in range(1, T + 1, cfg.chunk):
            t1 = min(T, t0 + cfg.chunk - 1)
            a = arr_hist[h][t0 : t1 + 1]
            q_new = kernels.fifo_delays(a, t0, q, warm, delay_hist[h], delay_stats[h])
            qs = kernels.lindley(a, np.ones(a.size, dtype=np.int16), q)
            if int(qs[-1]) != int(q_new):
                raise SchemeError("fifo recursion out of step")
            q = int(q_new)
            keep = qs[max(0, warm - t0):]
            if keep.size:
                q_sum[r] += float(keep.sum())
                q_max[r] = max(q_max[r], int(keep.max()))
            if trace is not None:
                trace["Q"][r, t0 : t1 + 1] = qs
        q_end[r] = q
        tot = int(arr_hist[h].sum())
        out["final_A"][g] = tot
        out["final_Z"][g] = -1
        out["naks"][g] = out["safety_violations"][g] = out["window_max"][g] = -1
        cons["arrivals"][h] += tot
        cons["delivered"][h] += tot - q
        cons["in_window"][h] += q
    n_post = T - max(warm, 1) + 1
    final_A = np.array([out["final_A"][grp_of[r]] for r in range(R)], dtype=np.int64)
    out.update(delay_hist=delay_hist, delay_stats=delay_stats, receiver_ids=ids,
               receiver_group=grp_of, receiver_delay=None, q_mean=q_sum / n_post,
               q_max=q_max, final_S=final_A - q_end, final_Q=q_end, conservation=cons,
               trace=trace)
    return out
