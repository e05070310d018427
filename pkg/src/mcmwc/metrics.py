"""Performance quantities extracted from completed scheme runs.

A :class:`MetricsReport` stores only additive sums (histograms, counts, op
totals), so merging reports from independent replications is associative and
commutative; every rate, mean and tail is derived from the sums on demand.
"""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .analysis import MIN_EVENTS, tail_from_hist

STABLE_GROWTH = 0.01  # final Q per post-warmup slot above this counts as linear growth


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class DelayRecord:
    session: int
    index: int
    receiver: int
    arrival: int
    decoded: int

    @property
    def delay(self):
        return self.decoded - self.arrival


@dataclass(frozen=True)
class IntervalRecord:
    receiver: int
    d: int
    length: int
    arrivals: int


@dataclass
class MetricsReport:
    kind: str
    m: int
    seeds: tuple
    delivered: np.ndarray  # (m,) post-warmup deliveries over all tracked pairs
    pair_slots: np.ndarray  # (m,) tracked pairs x post-warmup slots
    delay_hist: np.ndarray  # (m, H)
    delay_sum: np.ndarray
    delay_max: np.ndarray
    interval_hist: np.ndarray
    interval_sum: int = 0
    interval_count: int = 0
    interval_max: int = 0
    interval_k: int = 0
    ops: int = 0
    decoded: int = 0
    concrete: bool = False
    q_growth: float = 0.0
    conservation_ok: bool = True
    runs: int = 1
    extra: dict = field(default_factory=dict)

    # -- derived quantities --------------------------------------------------

    @property
    def throughput(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.pair_slots > 0, self.delivered / np.maximum(self.pair_slots, 1), np.nan)

    @property
    def mean_delay(self):
        n = int(self.delay_hist.sum())
        return float(self.delay_sum.sum() / n) if n else float("nan")

    @property
    def session_mean_delay(self):
        n = self.delay_hist.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, self.delay_sum / np.maximum(n, 1), np.nan)

    @property
    def empty_tail(self):
        return int(self.delay_hist.sum()) == 0

    def tail(self, session=None):
        """(P(D > k), exceedance counts) for k = 0..H-1, pooled unless ``session`` given."""
        h = self.delay_hist.sum(axis=0) if session is None else self.delay_hist[session]
        return tail_from_hist(h)

    @property
    def k_max(self):
        _, counts = self.tail()
        idx = np.flatnonzero(counts >= MIN_EVENTS)
        return int(idx[-1]) if idx.size else -1

    @property
    def interval_mean(self):
        return self.interval_sum / self.interval_count if self.interval_count else float("nan")

    @property
    def renewal_rate(self):
        """sum K_d / sum I_d: merged arrivals per slot seen through decoding intervals."""
        return self.interval_k / self.interval_sum if self.interval_sum else float("nan")

    @property
    def ops_per_packet(self):
        return self.ops / self.decoded if self.concrete and self.decoded else float("nan")

    @property
    def stable(self):
        return self.q_growth < STABLE_GROWTH

    # -- aggregation ---------------------------------------------------------

    def merge(self, other):
        if (self.kind, self.m) != (other.kind, other.m) or self.delay_hist.shape != other.delay_hist.shape:
            raise MetricsError("cannot merge reports of different schemes or shapes")
        return MetricsReport(
            kind=self.kind,
            m=self.m,
            seeds=tuple(sorted(self.seeds + other.seeds)),
            delivered=self.delivered + other.delivered,
            pair_slots=self.pair_slots + other.pair_slots,
            delay_hist=self.delay_hist + other.delay_hist,
            delay_sum=self.delay_sum + other.delay_sum,
            delay_max=np.maximum(self.delay_max, other.delay_max),
            interval_hist=self.interval_hist + other.interval_hist,
            interval_sum=self.interval_sum + other.interval_sum,
            interval_count=self.interval_count + other.interval_count,
            interval_max=max(self.interval_max, other.interval_max),
            interval_k=self.interval_k + other.interval_k,
            ops=self.ops + other.ops,
            decoded=self.decoded + other.decoded,
            concrete=self.concrete and other.concrete,
            q_growth=max(self.q_growth, other.q_growth),
            conservation_ok=self.conservation_ok and other.conservation_ok,
            runs=self.runs + other.runs,
        )

    # -- emission ------------------------------------------------------------

    def to_dict(self):
        tail, counts = self.tail()
        k = self.k_max
        return {
            "kind": self.kind,
            "m": self.m,
            "runs": self.runs,
            "seeds": list(self.seeds),
            "throughput": _jsonable(self.throughput),
            "delay": {
                "mean": _jsonable(self.mean_delay),
                "session_mean": _jsonable(self.session_mean_delay),
                "max": self.delay_max.tolist(),
                "samples": int(self.delay_hist.sum()),
                "histogram": self.delay_hist.sum(axis=0).tolist(),
            },
            "tail": {
                "k_max": k,
                "empty_tail": self.empty_tail,
                "p_exceed": tail[: k + 1].tolist(),
                "count_exceed": counts[: k + 1].tolist(),
            },
            "intervals": {
                "mean": _jsonable(self.interval_mean),
                "count": self.interval_count,
                "max": self.interval_max,
                "renewal_rate": _jsonable(self.renewal_rate),
                "histogram": self.interval_hist.tolist(),
            },
            "complexity": None if not self.concrete else {
                "ops": self.ops, "decoded": self.decoded,
                "ops_per_packet": _jsonable(self.ops_per_packet)},
            "stable": self.stable,
            "q_growth": self.q_growth,
            "conservation_ok": self.conservation_ok,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def csv_rows(self):
        rows = []
        for h, v in enumerate(self.throughput):
            rows.append(("throughput", f"session{h}", v))
        rows.append(("mean_delay", "all", self.mean_delay))
        for h, v in enumerate(self.session_mean_delay):
            rows.append(("mean_delay", f"session{h}", v))
        tail, _ = self.tail()
        for k in range(self.k_max + 1):
            rows.append(("tail", str(k), tail[k]))
        rows.append(("interval_mean", "all", self.interval_mean))
        rows.append(("renewal_rate", "all", self.renewal_rate))
        if self.concrete:
            rows.append(("ops_per_packet", "all", self.ops_per_packet))
        rows.append(("stable", "all", int(self.stable)))
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "key", "value"])
        for metric, key, value in self.csv_rows():
            w.writerow([metric, key, _fmt(value)])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [None if not np.isfinite(v) else float(v) for v in x]
    x = float(x)
    return None if not np.isfinite(x) else x


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def merge_all(reports):
    reports = list(reports)
    if not reports:
        raise MetricsError("nothing to merge")
    out = reports[0]
    for r in reports[1:]:
        out = out.merge(r)
    return out


# ---------------------------------------------------------------------------
# Collection


def conservation_holds(run):
    c = run.conservation
    if not c:
        return True
    lhs = c["arrivals"]
    rhs = c["delivered"] + c["in_window"] + c["indeterminable"]
    parts_ok = all((c[k] >= 0).all() for k in ("delivered", "in_window", "indeterminable"))
    return bool(np.array_equal(lhs, rhs) and parts_ok)


def collect(run):
    n_post = run.horizon - max(run.warmup, 1) + 1
    ist = run.interval_stats.sum(axis=0) if run.interval_stats.size else np.zeros(4, dtype=np.int64)
    ihist = run.interval_hist.sum(axis=0)
    growth = float(run.final_Q.max()) / n_post if run.final_Q.size else 0.0
    conc = run.concrete or {}
    return MetricsReport(
        kind=run.kind,
        m=run.m,
        seeds=(run.seed,),
        delivered=run.delay_stats[:, 1].copy(),
        pair_slots=run.session_pairs * n_post,
        delay_hist=run.delay_hist.copy(),
        delay_sum=run.delay_stats[:, 0].copy(),
        delay_max=run.delay_stats[:, 2].copy(),
        interval_hist=ihist,
        interval_sum=int(ist[0]),
        interval_count=int(ist[1]),
        interval_max=int(run.interval_stats[:, 2].max()) if run.interval_stats.size else 0,
        interval_k=int(ist[3]),
        ops=int(conc.get("ops", 0)),
        decoded=int(conc.get("decoded", 0)),
        concrete=run.fidelity == "concrete",
        q_growth=growth,
        conservation_ok=conservation_holds(run),
    )


@dataclass(frozen=True)
class OpsSnapshot:
    ops: int
    decoded: int
    per_packet: float
    undefined: bool


def op_counter_snapshot(run):
    if run.fidelity != "concrete" or run.concrete is None:
        raise MetricsError("no field ops in ideal mode")
    ops, dec = int(run.concrete["ops"]), int(run.concrete["decoded"])
    if dec == 0:
        return OpsSnapshot(ops, 0, float("nan"), True)
    return OpsSnapshot(ops, dec, ops / dec, False)


# ---------------------------------------------------------------------------
# Replays over recorded trajectories


def _need_trace(run):
    if run.trace is None:
        raise MetricsError("run was not recorded; set SchemeConfig.record=True")
    return run.trace


def merged_arrivals(run, g):
    tr = _need_trace(run)
    return tr["a"][run.group_sessions[g]].sum(axis=0)


def check_queue_identity(run):
    """Count slots where Q != A - S, with S replayed from the recorded successes."""
    tr = _need_trace(run)
    bad = 0
    for r in range(run.receiver_ids.size):
        g = int(run.receiver_group[r])
        A = tr["A"][g]
        c = tr["c"][r]
        s = 0
        S = np.zeros_like(A)
        for t in range(1, A.size):
            s += min(int(c[t]), int(A[t]) - s)
            S[t] = s
        if "S" in tr:
            bad += int((tr["S"][r] > S).sum())  # concrete can only trail the counting model
            bad += int((tr["Q"][r] != A - tr["S"][r]).sum())
        else:
            bad += int((tr["Q"][r] != A - S).sum())
    return bad


def decode_moments_replay(a, c):
    """First-passage replay: slots t >= 1 where max(Q + a - c, 0) hits 0, plus slot 0."""
    q, out = 0, [0]
    for t in range(1, len(a)):
        q = max(q + int(a[t]) - int(c[t]), 0)
        if q == 0:
            out.append(t)
    return out


def interval_records(run, r):
    tr = _need_trace(run)
    g = int(run.receiver_group[r])
    a = merged_arrivals(run, g)
    cum = np.cumsum(a)
    log = tr["decode_log"][r]
    rx = int(run.receiver_ids[r])
    return [IntervalRecord(rx, d, log[d + 1] - log[d], int(cum[log[d + 1]] - cum[log[d]]))
            for d in range(len(log) - 1)]


def delay_records(run, r):
    """Every packet decoded at receiver ``r`` from a recorded window-code run."""
    tr = _need_trace(run)
    g = int(run.receiver_group[r])
    sessions = run.group_sessions[g]
    a = tr["a"]
    log = tr["decode_log"][r]
    rx = int(run.receiver_ids[r])
    subs = set(run.receiver_sessions[r])
    out, idx = [], 0
    pending = []
    j = 1
    for t in range(1, a.shape[1]):
        for h in sessions:
            for _ in range(int(a[h, t])):
                idx += 1
                pending.append((h, idx, t))
        while j < len(log) and log[j] < t:
            j += 1
        if j < len(log) and log[j] == t:
            out.extend(DelayRecord(h, l, rx, s, t) for h, l, s in pending if h in subs)
            pending = []
    return out
