"""Analytical lease model, ideal-duration search, and its Monte Carlo twin.

Reads of a key at one cache and writes to it system-wide are modeled as
independent Poisson processes with mean gaps r_mean and w_mean (seconds).
After a miss the value is cached for a lease of d seconds, so a lease period
serves one miss plus d/r_mean expected hits. A hit is fresh while no write has
landed since the fetch. The model below gives, per lease period:

    expected hits          d / r_mean
    P(no write within d)   exp(-d / w_mean)
    E[fresh window | a write lands within d]
                           (1 - (x+1) e^-x) / (lam (1 - e^-x)),  x = lam d
    fresh hit rate         share of all accesses that are fresh hits
    stale rate             share of all accesses that are stale hits

The ideal lease search walks d = k * r_mean for k = 1, 2, 3, ... and stops at
the first k whose fresh hit rate drops below the best seen, returning the best.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# Lease durations clamp here when the write rate is unknown or zero.
DEFAULT_MAX_LEASE_S = 5.0

# The gradient walk gives up past this multiplier of r_mean.
SEARCH_CAP = 10 ** 6

EWMA_ALPHA = 0.2


class LeaseSearchOverflow(RuntimeError):
    """find_ideal_lease walked SEARCH_CAP multiples of r_mean without a peak."""


class LeaseDecision(NamedTuple):
    duration_s: float
    fresh_hit_rate: float


class McRates(NamedTuple):
    fresh_rate: float
    stale_rate: float
    hit_rate: float
    accesses: int


def expected_hits(r_mean: float, d: float) -> float:
    return d / r_mean


def prob_no_update(w_mean: float, d: float) -> float:
    if not w_mean or math.isinf(w_mean):
        return 1.0
    return math.exp(-d / w_mean)


def prob_update(w_mean: float, d: float) -> float:
    if not w_mean or math.isinf(w_mean):
        return 0.0
    return -math.expm1(-d / w_mean)


def _one_minus_1px_expmx(x: float) -> float:
    """1 - (1+x) e^-x, stable for small x.

    Direct evaluation loses ~x^-2 relative digits near zero (the result is
    O(x^2/2)); below the cutoff use the series sum_{k>=2} (-1)^k (k-1)/k! x^k.
    """
    if x >= 0.05:
        return 1.0 - (1.0 + x) * math.exp(-x)
    total = 0.0
    # term_k = (-1)^k x^k (k-1)/k!, built incrementally from x^k/k!.
    pow_fact = x * x / 2.0  # x^2/2!
    sign = 1.0
    for k in range(2, 30):
        term = sign * pow_fact * (k - 1)
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
        pow_fact *= x / (k + 1)
        sign = -sign
    return total


def expected_fresh_duration(w_mean: float, d: float) -> float:
    """E[time from fetch to first write | a write lands within the lease]."""
    if d <= 0.0:
        return 0.0
    if not w_mean or math.isinf(w_mean):
        return d / 2.0  # limiting value as the write rate vanishes
    x = d / w_mean
    num = _one_minus_1px_expmx(x)
    den = -math.expm1(-x)
    return w_mean * num / den


def hit_rate(r_mean: float, d: float) -> float:
    if d <= 0.0:
        return 0.0
    h = d / r_mean
    return h / (h + 1.0)


def fresh_hit_rate(r_mean: float, w_mean: float, d: float) -> float:
    """Share of all accesses (hits + the leading miss) that are fresh hits."""
    if d <= 0.0:
        return 0.0
    denom = d / r_mean + 1.0
    if not w_mean or math.isinf(w_mean):
        return (d / r_mean) / denom
    p_no = math.exp(-d / w_mean)
    p_up = -math.expm1(-d / w_mean)
    d_f = expected_fresh_duration(w_mean, d)
    return (p_no * d + p_up * d_f) / (r_mean * denom)


def stale_rate(r_mean: float, w_mean: float, d: float) -> float:
    """Share of all accesses that are hits served after a missed write."""
    if d <= 0.0:
        return 0.0
    p_up = prob_update(w_mean, d)
    if p_up == 0.0:
        return 0.0
    d_f = expected_fresh_duration(w_mean, d)
    return p_up * ((d - d_f) / r_mean) / (d / r_mean + 1.0)


def find_ideal_lease(r_mean: float, w_mean: float | None,
                     max_duration_s: float = DEFAULT_MAX_LEASE_S) -> LeaseDecision:
    """Walk d = k*r_mean until the fresh hit rate first drops; return the best.

    An unknown or zero write rate makes the rate monotone in d, so the walk
    would never stop; those inputs clamp to max_duration_s instead.
    """
    if r_mean is None or r_mean <= 0.0:
        raise ValueError("r_mean must be positive")
    if w_mean is None or w_mean <= 0.0 or math.isinf(w_mean):
        return LeaseDecision(max_duration_s, fresh_hit_rate(r_mean, math.inf, max_duration_s))
    best_d = 0.0
    best_rate = 0.0
    k = 1
    while True:
        d = k * r_mean
        rate = fresh_hit_rate(r_mean, w_mean, d)
        if rate < best_rate:
            return LeaseDecision(best_d, best_rate)
        best_d, best_rate = d, rate
        k += 1
        if k > SEARCH_CAP:
            raise LeaseSearchOverflow(
                f"no fresh-hit-rate peak within {SEARCH_CAP} multiples of r_mean")


def static_lease_for_update_prob(update_prob: float, w_mean: float) -> float:
    """Lease duration whose in-lease write probability is update_prob."""
    if not 0.0 < update_prob < 1.0:
        raise ValueError("update_prob must be in (0, 1)")
    return -math.log(1.0 - update_prob) * w_mean


# --- EWMA gap tracker -------------------------------------------------------

class AccessStats:
    """EWMA of inter-access gaps from a stream of non-decreasing timestamps.

    The first gap seeds the mean; later gaps fold in with weight alpha. The
    mean is defined once two samples (one gap) have been seen. Out-of-order
    timestamps are dropped and counted, never folded in.
    """

    __slots__ = ("alpha", "count", "ignored", "_last_us", "mean_gap_us")

    def __init__(self, alpha: float = EWMA_ALPHA):
        self.alpha = alpha
        self.count = 0
        self.ignored = 0
        self._last_us = 0
        self.mean_gap_us = 0.0

    def record(self, t_us: int) -> None:
        if self.count == 0:
            self.count = 1
            self._last_us = t_us
            return
        if t_us < self._last_us:
            self.ignored += 1
            return
        gap = t_us - self._last_us
        self._last_us = t_us
        if self.count == 1:
            self.mean_gap_us = float(gap)
        else:
            self.mean_gap_us += self.alpha * (gap - self.mean_gap_us)
        self.count += 1

    @property
    def warmed(self) -> bool:
        return self.count >= 2

    def mean_gap_s(self) -> float | None:
        return self.mean_gap_us * 1e-6 if self.count >= 2 else None


# --- Monte Carlo twin -------------------------------------------------------

_classify_jit = None


def _get_classifier():
    # numba import deferred: only Monte Carlo users pay its startup cost.
    global _classify_jit
    if _classify_jit is None:
        from numba import njit

        @njit(cache=True)
        def classify(reads, writes, d):
            n = reads.shape[0]
            nw = writes.shape[0]
            misses = 0
            fresh = 0
            stale = 0
            wi = 0
            lease_end = -1.0
            stale_since = np.inf
            for i in range(n):
                t = reads[i]
                if t > lease_end:
                    misses += 1
                    lease_end = t + d
                    while wi < nw and writes[wi] <= t:
                        wi += 1
                    stale_since = writes[wi] if wi < nw else np.inf
                else:
                    if t >= stale_since:
                        stale += 1
                    else:
                        fresh += 1
            return misses, fresh, stale

        _classify_jit = classify
    return _classify_jit


def monte_carlo_fresh_rate(r_mean: float, w_mean: float, d: float,
                           n_accesses: int, seed: int) -> McRates:
    """Simulate the read/write streams directly and classify every access.

    Reads and writes arrive with exponential gaps. After each read miss the
    value is cached for d; every in-lease read is a hit, stale once any write
    has landed since the miss that fetched it.
    """
    rng = np.random.default_rng(seed)
    reads = np.cumsum(rng.exponential(r_mean, n_accesses))
    horizon = reads[-1]
    if w_mean and not math.isinf(w_mean):
        n_writes = int(horizon / w_mean * 1.1) + 64
        while True:
            writes = np.cumsum(rng.exponential(w_mean, n_writes))
            if writes[-1] > horizon:
                break
            n_writes *= 2  # undershot the horizon; resample wider
    else:
        writes = np.empty(0, dtype=np.float64)
    misses, fresh, stale = _get_classifier()(reads, writes, float(d))
    n = float(n_accesses)
    return McRates(fresh / n, stale / n, (fresh + stale) / n, n_accesses)
