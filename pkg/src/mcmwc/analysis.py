"""Large-deviations exponents, capacity checks and tail-slope estimation.

All exponents are in nats per slot.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .topology import ArrivalProcess, GammaDist

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
BRACKET = 50.0
DRIFT_TOL = 1e-12


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class MGFSpec:
    """Finite-support law of a_h[t] with log-MGF evaluators."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.size == 0 or not np.isfinite(v).all():
            raise AnalysisError("arrival support must be finite and aligned with probabilities")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise AnalysisError("arrival probabilities must be nonnegative and sum to 1")

    @classmethod
    def bernoulli(cls, lam):
        return cls((0.0, 1.0), (1.0 - lam, lam))

    @classmethod
    def from_arrivals(cls, proc: ArrivalProcess):
        return cls(tuple(float(v) for v in proc.values), tuple(proc.probs))

    @property
    def mean(self):
        return float(np.dot(self.values, self.probs))

    @property
    def max_value(self):
        return max(v for v, p in zip(self.values, self.probs) if p > 0)

    def log_mgf(self, theta):
        """log E[exp(theta * a)], stable for large |theta|."""
        p = np.asarray(self.probs, dtype=float)
        v = np.asarray(self.values, dtype=float)
        keep = p > 0
        return float(logsumexp(theta * v[keep], b=p[keep]))


@dataclass(frozen=True)
class RateFunctionResult:
    phi: float
    theta_star: float
    converged: bool


def _log_channel(theta, gamma):
    """log(g e^theta + 1 - g), elementwise and overflow-safe."""
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        a = np.log(gamma) + theta
        b = np.log1p(-gamma)
    return np.logaddexp(a, b)


def _golden_max(fn, lo, hi, tol=1e-9, max_iter=400):
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    it = 0
    while b - a > tol and it < max_iter:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fn(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fn(x1)
        it += 1
    x = 0.5 * (a + b)
    return x, fn(x), b - a <= tol


def _sup_concave(fn, tol=1e-9):
    """Maximize a concave function over the real line, growing the bracket on edge hits."""
    lo, hi = -BRACKET, BRACKET
    for _ in range(8):
        x, fx, ok = _golden_max(fn, lo, hi, tol)
        edge = min(x - lo, hi - x) < 1e-6 * (hi - lo)
        if not edge:
            break
        lo, hi = 2 * lo, 2 * hi
    # the origin is always feasible and gives 0
    if fn(0.0) > fx:
        return 0.0, fn(0.0), ok
    return x, fx, ok


def _rate_objective(gamma_row, arr, m):
    g = np.asarray(gamma_row, dtype=float)

    def obj(theta):
        val = -m * arr.log_mgf(-theta) - float(np.sum(_log_channel(theta, g)))
        return val if np.isfinite(val) else -np.inf

    return obj


def rate_function(gamma_row, arr, m=None):
    """sup_theta { -m log E e^{-theta a} - sum_j log(g_j e^theta + 1 - g_j) }."""
    g = np.asarray(gamma_row, dtype=float).ravel()
    m = g.size if m is None else int(m)
    if g.size != m:
        raise AnalysisError(f"gamma row has {g.size} entries for m={m}")
    if g.size and (g.min() < 0 or g.max() > 1):
        raise AnalysisError("reception probabilities must lie in [0, 1]")
    if isinstance(arr, ArrivalProcess):
        arr = MGFSpec.from_arrivals(arr)
    # The objective is 0 at theta = 0 with slope -(sum g - m E a). Without positive
    # drift its supremum moves to theta > 0, but then the queue does not drain and
    # the delay tail has no exponent.
    if float(g.sum()) - m * arr.mean <= DRIFT_TOL:
        return RateFunctionResult(0.0, 0.0, True)
    obj = _rate_objective(g, arr, m)
    theta, val, ok = _sup_concave(obj)
    if val <= 0:
        return RateFunctionResult(0.0, 0.0 if val <= 1e-15 else theta, ok)
    return RateFunctionResult(float(val), float(theta), ok)


def asymptotic_rate(gamma, arr):
    """Per-channel exponent as m grows: sup_theta { -log E e^{-theta a} - E_g log(g e^theta + 1 - g) }."""
    if isinstance(arr, ArrivalProcess):
        arr = MGFSpec.from_arrivals(arr)
    if not isinstance(gamma, GammaDist):
        gamma = GammaDist.degenerate(float(gamma))
    if arr.mean >= gamma.mean:
        raise AnalysisError(f"no positive drift: lambda={arr.mean} >= mean gamma={gamma.mean}")

    if gamma.kind == "degenerate":
        g0 = gamma.params[0]

        def chan(theta):
            return float(_log_channel(theta, g0))
    else:
        if gamma.kind == "empirical":
            x = np.asarray(gamma.params, dtype=float)
            w = np.full(x.size, 1.0 / x.size)
        else:
            from .topology import QUAD_POINTS

            x = (np.arange(QUAD_POINTS) + 0.5) / QUAD_POINTS
            if gamma.kind == "uniform":
                w = np.full(x.size, 1.0 / x.size)
            else:
                from scipy.stats import beta as beta_law

                w = beta_law.pdf(x, *gamma.params)
                w = w / w.sum()

        def chan(theta):
            return float(np.dot(w, _log_channel(theta, x)))

    def obj(theta):
        val = -arr.log_mgf(-theta) - chan(theta)
        return val if np.isfinite(val) else -np.inf

    _, val, _ = _sup_concave(obj)
    return max(float(val), 0.0)


def phi_const(arr, hi=200.0, tol=1e-12):
    """Decay exponent of a unit-service FIFO: sup{theta > 0 : log E e^{theta a} < theta}."""
    if isinstance(arr, ArrivalProcess):
        arr = MGFSpec.from_arrivals(arr)
    if arr.mean >= 1.0:
        raise AnalysisError(f"unstable FIFO: mean arrivals {arr.mean} >= 1")
    if arr.max_value <= 1:
        return math.inf

    def gap(theta):
        return arr.log_mgf(theta) - theta

    # gap < 0 just above 0 (negative drift) and eventually > 0 since max support > 1
    if gap(hi) < 0:
        return math.inf
    lo = 0.0
    top = hi
    while top - lo > tol:
        mid = 0.5 * (lo + top)
        if mid > 0 and gap(mid) < 0:
            lo = mid
        else:
            top = mid
    return 0.5 * (lo + top)


def capacity_membership(lambda_vec, stats, layout):
    lam = np.asarray(lambda_vec, dtype=float)
    if lam.size != layout.m:
        raise AnalysisError(f"rate vector has {lam.size} entries for m={layout.m}")
    if (lam < 0).any():
        raise AnalysisError("rates must be nonnegative")
    rx = layout.receivers
    sums = stats.gamma[rx].sum(axis=1)
    return bool(lam.sum() / layout.m <= sums.min() / layout.m)


def bottleneck_probability(lam, m, n_receivers, gamma_cdf):
    """P(at least one of n receivers has every channel below lam/m)."""
    if lam <= 0 or m < 1:
        raise AnalysisError("need lambda > 0 and m >= 1")
    f = float(gamma_cdf(lam / m))
    p_one = f ** m
    return float(-np.expm1(n_receivers * np.log1p(-p_one))) if p_one < 1 else 1.0


def sufficient_channels(n, gamma_mean, lam):
    """ceil(log n / (mean gamma - lambda)^2); natural log."""
    if lam >= gamma_mean:
        raise AnalysisError("no positive drift")
    return max(1, math.ceil(math.log(n) / (gamma_mean - lam) ** 2))


# ---------------------------------------------------------------------------
# Empirical tails

SKIP_MASS = 0.2
MIN_EVENTS = 50
MIN_POINTS = 5


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r2: float
    k0: int
    k_max: int


def tail_from_hist(hist):
    """P(D > k) for k = 0..len-1 from a delay histogram (counts per delay)."""
    h = np.asarray(hist, dtype=np.int64)
    total = h.sum()
    if total == 0:
        return np.zeros(h.size), np.zeros(h.size, dtype=np.int64)
    exceed = total - np.cumsum(h)
    return exceed / total, exceed


def estimate_decay_rate(tail, counts=None, k=None):
    """Least-squares slope of -log P(D > k).

    ``counts[k]`` is the number of samples exceeding k; when it is given the
    window ends at the last k with at least 50 exceedances, otherwise at the
    last positive entry. The window starts once 20% of the mass has passed.
    """
    tail = np.asarray(tail, dtype=float)
    k = np.arange(tail.size) if k is None else np.asarray(k, dtype=float)
    pos = tail > 0
    if counts is not None:
        pos &= np.asarray(counts) >= MIN_EVENTS
    if not pos.any():
        raise AnalysisError("insufficient tail mass")
    last = int(np.flatnonzero(pos)[-1])
    start_idx = np.flatnonzero(tail <= 1.0 - SKIP_MASS)
    first = int(start_idx[0]) if start_idx.size else 0
    sel = np.arange(first, last + 1)
    sel = sel[tail[sel] > 0]
    if sel.size < MIN_POINTS:
        raise AnalysisError(f"insufficient tail mass: {sel.size} usable points")
    x = k[sel]
    y = -np.log(tail[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    return DecayFit(float(slope), r2, int(k[sel[0]]), int(k[sel[-1]]))
