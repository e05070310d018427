"""Network instances: sessions, receiver sets, channel statistics, arrivals."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

QUAD_POINTS = 100_000


class TopologyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True)
class GammaDist:
    """Law of a single reception probability gamma_{i,j}.

    ``kind`` is one of ``uniform`` (on [0, 1]), ``degenerate`` (``params=(g,)``),
    ``beta`` (``params=(a, b)``) or ``empirical`` (``params`` = sample values).
    """

    kind: str = "uniform"
    params: tuple = ()

    def __post_init__(self):
        k, p = self.kind, self.params
        if k == "uniform":
            return
        if k == "degenerate":
            if len(p) != 1 or not 0.0 <= p[0] <= 1.0:
                raise TopologyError("degenerate gamma needs one value in [0, 1]")
        elif k == "beta":
            if len(p) != 2 or min(p) <= 0:
                raise TopologyError("beta gamma needs two positive shape parameters")
        elif k == "empirical":
            v = np.asarray(p, dtype=float)
            if v.size == 0 or v.min() < 0 or v.max() > 1:
                raise TopologyError("empirical gamma needs values in [0, 1]")
        else:
            raise TopologyError(f"unknown gamma distribution {k!r}")

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def degenerate(cls, g):
        return cls("degenerate", (float(g),))

    @classmethod
    def beta(cls, a, b):
        return cls("beta", (float(a), float(b)))

    @classmethod
    def empirical(cls, values):
        return cls("empirical", tuple(float(v) for v in np.ravel(values)))

    @property
    def mean(self):
        if self.kind == "uniform":
            return 0.5
        if self.kind == "degenerate":
            return self.params[0]
        if self.kind == "beta":
            a, b = self.params
            return a / (a + b)
        return float(np.mean(self.params))

    def sample(self, rng, size):
        if self.kind == "uniform":
            return rng.random(size)
        if self.kind == "degenerate":
            return np.full(size, self.params[0])
        if self.kind == "beta":
            return rng.beta(*self.params, size=size)
        return rng.choice(np.asarray(self.params), size=size)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            out = np.clip(x, 0.0, 1.0)
        elif self.kind == "degenerate":
            out = (x >= self.params[0]).astype(float)
        elif self.kind == "beta":
            from scipy.special import betainc

            out = betainc(self.params[0], self.params[1], np.clip(x, 0.0, 1.0))
        else:
            v = np.sort(np.asarray(self.params))
            out = np.searchsorted(v, x, side="right") / v.size
        return out if out.ndim else float(out)

    def expect(self, fn):
        """E[fn(gamma)]: exact for point masses, midpoint quadrature otherwise."""
        if self.kind == "degenerate":
            return float(fn(np.array([self.params[0]]))[0])
        if self.kind == "empirical":
            return float(np.mean(fn(np.asarray(self.params))))
        x = (np.arange(QUAD_POINTS) + 0.5) / QUAD_POINTS
        if self.kind == "uniform":
            return float(np.mean(fn(x)))
        from scipy.stats import beta as beta_law

        w = beta_law.pdf(x, *self.params)
        return float(np.sum(fn(x) * w) / np.sum(w))


@dataclass(frozen=True)
class SessionSizeDist:
    """Law of s_h with mean ``n``; samples are always >= 1.

    ``poisson`` is zero-truncated by resampling, which lifts its mean to
    ``n / (1 - exp(-n))``; ``geometric`` lives on {1, 2, ...} and
    ``uniform`` on {1, ..., 2n-1}, so neither needs correction.
    """

    kind: str = "degenerate"
    n: float = 1

    def __post_init__(self):
        if self.kind not in ("degenerate", "poisson", "geometric", "uniform"):
            raise TopologyError(f"unknown session size distribution {self.kind!r}")
        if self.n < 1:
            raise TopologyError("expected session size must be >= 1")
        if self.kind in ("degenerate", "uniform") and int(self.n) != self.n:
            raise TopologyError(f"{self.kind} session size needs an integer mean")

    @property
    def mean(self):
        if self.kind == "poisson":
            return self.n / (1.0 - math.exp(-self.n))
        return float(self.n)

    def sample(self, rng, size):
        n = self.n
        if self.kind == "degenerate":
            return np.full(size, int(n), dtype=np.int64)
        if self.kind == "geometric":
            return rng.geometric(1.0 / n, size=size).astype(np.int64)
        if self.kind == "uniform":
            return rng.integers(1, 2 * int(n), size=size, endpoint=False).astype(np.int64)
        out = rng.poisson(n, size=size).astype(np.int64)
        bad = out == 0
        while bad.any():
            out[bad] = rng.poisson(n, size=int(bad.sum()))
            bad = out == 0
        return out


@dataclass(frozen=True)
class ArrivalProcess:
    """i.i.d. per-slot arrivals with finite support ``values`` / ``probs``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.size == 0:
            raise TopologyError("arrival support and probabilities must align")
        if (v < 0).any() or (v != np.round(v)).any():
            raise TopologyError("arrival values must be nonnegative integers")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise TopologyError("arrival probabilities must be nonnegative and sum to 1")

    @classmethod
    def bernoulli(cls, lam):
        if not 0.0 <= lam <= 1.0:
            raise TopologyError(f"Bernoulli rate must lie in [0, 1], got {lam}")
        return cls((0, 1), (1.0 - lam, lam))

    @classmethod
    def batch(cls, support):
        vals, probs = zip(*support)
        return cls(tuple(int(v) for v in vals), tuple(float(p) for p in probs))

    @property
    def rate(self):
        return float(np.dot(self.values, self.probs))

    @property
    def max_value(self):
        return int(max(v for v, p in zip(self.values, self.probs) if p > 0))

    def sample(self, rng, size):
        u = rng.random(size)
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        return np.asarray(self.values, dtype=np.int16)[idx]


# ---------------------------------------------------------------------------
# Instances


@dataclass
class ChannelStats:
    gamma: np.ndarray  # (receivers, channels)

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if self.gamma.size and (self.gamma.min() < 0 or self.gamma.max() > 1):
            raise TopologyError("reception probabilities must lie in [0, 1]")

    @property
    def n_receivers(self):
        return self.gamma.shape[0]

    @property
    def n_channels(self):
        return self.gamma.shape[1]


@dataclass
class SessionLayout:
    m: int
    receiver_sets: list
    n: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.receiver_sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in self.receiver_sets]
        if len(self.receiver_sets) != self.m:
            raise TopologyError(f"expected {self.m} receiver sets, got {len(self.receiver_sets)}")
        if any(s.size == 0 for s in self.receiver_sets):
            raise TopologyError("empty receiver set")

    @property
    def receivers(self):
        return np.unique(np.concatenate(self.receiver_sets))

    @property
    def sizes(self):
        return [int(s.size) for s in self.receiver_sets]

    def sessions_of(self, i):
        return [h for h, s in enumerate(self.receiver_sets) if i in s]


def sample_instance(m, n, gamma_dist=None, size_dist=None, overlap_mode="disjoint",
                    share_p=0.0, seed=0):
    """Draw a random layout and its channel matrix.

    ``overlap_mode='shared'`` first builds disjoint sets and then adds every
    receiver to every other session independently with probability ``share_p``.
    """
    if m < 1 or n < 1:
        raise TopologyError("need m >= 1 and n >= 1")
    gamma_dist = gamma_dist or GammaDist.uniform()
    size_dist = size_dist or SessionSizeDist("degenerate", n)
    if overlap_mode not in ("disjoint", "shared"):
        raise TopologyError(f"unknown overlap mode {overlap_mode!r}")
    if not 0.0 <= share_p <= 1.0:
        raise TopologyError("share probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sizes = size_dist.sample(rng, m)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    sets = [list(range(bounds[h], bounds[h + 1])) for h in range(m)]
    if overlap_mode == "shared" and share_p > 0 and m > 1:
        total = int(bounds[-1])
        home = np.repeat(np.arange(m), sizes)
        join = rng.random((total, m)) < share_p
        for h in range(m):
            extra = np.flatnonzero(join[:, h] & (home != h))
            sets[h].extend(extra.tolist())
    stats = ChannelStats(gamma_dist.sample(rng, (int(bounds[-1]), m)))
    layout = SessionLayout(m, sets, n=float(n), meta={"size_dist": size_dist.kind,
                                                       "overlap": overlap_mode})
    return layout, stats


def load_trace(path):
    """Read ``receiver,channel,gamma`` rows into a dense ChannelStats."""
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#"))
        reader = csv.reader(lines)
        for lineno, row in enumerate(reader, start=1):
            row = [c.strip() for c in row]
            if lineno == 1 and row and row[0].lower() == "receiver":
                if row != ["receiver", "channel", "gamma"]:
                    raise TopologyError(f"unexpected header {row}")
                continue
            if len(row) != 3:
                raise TopologyError(f"malformed row {lineno}: {row}")
            try:
                i, j, g = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise TopologyError(f"malformed row {lineno}: {row}") from None
            if i < 0 or j < 0:
                raise TopologyError(f"negative index in row {lineno}")
            if not 0.0 <= g <= 1.0:
                raise TopologyError(f"probability outside [0,1] in row {lineno}: {g}")
            if (i, j) in entries:
                raise TopologyError(f"duplicate entry for receiver {i}, channel {j}")
            entries[(i, j)] = g
    if not entries:
        raise TopologyError("trace has no entries")
    n_rx = 1 + max(i for i, _ in entries)
    n_ch = 1 + max(j for _, j in entries)
    gamma = np.full((n_rx, n_ch), np.nan)
    for (i, j), g in entries.items():
        gamma[i, j] = g
    missing = np.argwhere(np.isnan(gamma))
    if missing.size:
        i, j = missing[0]
        raise TopologyError(f"inconsistent column count: receiver {i} has no channel {j}")
    return ChannelStats(gamma)


def realize_channels(stats, t, rng):
    """One slot of c_{i,j}[t]: independent Bernoulli(gamma_{i,j}) draws."""
    del t  # erasures are i.i.d. over slots; the slot index only labels the draw
    return (rng.random(stats.gamma.shape) < stats.gamma).astype(np.uint8)


def realize_counts(gamma_rows, slots, rng):
    """Per-slot success counts sum_j c_{i,j}[t] for each row of ``gamma_rows``.

    Returns an int16 array of shape ``(slots, rows)``. Rows whose entries are
    all equal and span more than one channel are drawn as one binomial.
    """
    gamma_rows = np.atleast_2d(np.asarray(gamma_rows, dtype=float))
    n_rows, width = gamma_rows.shape
    out = np.empty((slots, n_rows), dtype=np.int16)
    for r in range(n_rows):
        g = gamma_rows[r]
        if width > 1 and np.all(g == g[0]):
            out[:, r] = rng.binomial(width, g[0], size=slots)
        else:
            out[:, r] = (rng.random((slots, width)) < g).sum(axis=1)
    return out
