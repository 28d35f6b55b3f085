"""Client-side key cache under three consistency strategies.

Naive     entries live until evicted; a stale-read abort evicts the culprit.
EI        entries live until the owning storage server calls back with an
          explicit invalidation after a committed write.
Lease     entries carry a self-invalidation deadline (local clock); an entry
          is never served past its lease end. Removal is lazy, on lookup.

Every entry records the version it caches, the lease end, and a freshness
stamp fts = max(version_ts, global watermark at insert): the client knows no
write superseded this version at or before fts. Lookup order (write buffer,
then read set, then cache) is the caller's job; the cache only serves entries.

Capacity is bounded with LRU eviction. Only designated (hot) keys are
cacheable; inserting any other key is a no-op. Per-key read gap trackers feed
the lease policy; reads of cacheable keys are tracked on hit and miss alike.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass

from .lease import (
    DEFAULT_MAX_LEASE_S, AccessStats, find_ideal_lease,
    static_lease_for_update_prob,
)
from .types import Timestamp

# Lease-end sentinel for strategies without self-invalidation.
NEVER_US = 1 << 62


class CacheStrategy(enum.IntEnum):
    NAIVE = 0
    EI = 1
    LEASE = 2


class RemoveReason(enum.IntEnum):
    EXPIRED = 0
    EVICTED = 1
    CALLBACK = 2
    STALE_ABORT = 3
    OWN_WRITE = 4
    REPLACED = 5
    CLEARED = 6


@dataclass(frozen=True)
class LeasePolicy:
    """ideal (gradient walk), mean (one mean write gap), or p:<x> (duration
    whose in-lease update probability is x)."""
    kind: str = "ideal"
    update_prob: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "LeasePolicy":
        if text in ("ideal", "mean"):
            return cls(text)
        if text.startswith("p:"):
            p = float(text[2:])
            if not 0.0 < p < 1.0:
                raise ValueError(f"update probability out of range: {text}")
            return cls("p", p)
        raise ValueError(f"unknown lease policy {text!r}")

    def __str__(self) -> str:
        return f"p:{self.update_prob:g}" if self.kind == "p" else self.kind


class CacheEntry:
    __slots__ = ("value", "version_ts", "fts", "lease_end_us")

    def __init__(self, value: bytes, version_ts: Timestamp, fts: Timestamp,
                 lease_end_us: int):
        self.value = value
        self.version_ts = version_ts
        self.fts = fts
        self.lease_end_us = lease_end_us


class ClientCache:
    def __init__(self, strategy: CacheStrategy, capacity: int,
                 cacheable: frozenset, policy: LeasePolicy = LeasePolicy(),
                 max_lease_s: float = DEFAULT_MAX_LEASE_S):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.strategy = strategy
        self.capacity = capacity
        self.cacheable = cacheable
        self.policy = policy
        self.max_lease_s = max_lease_s
        self.entries: OrderedDict[int, CacheEntry] = OrderedDict()
        self.read_trackers: dict[int, AccessStats] = {}
        self._freshness_floor = Timestamp(0, 0, 0)
        self.observer = None  # instrumentation only; no protocol role
        self.stats_hits = 0
        self.stats_misses = 0

    # -- reads ----------------------------------------------------------

    def lookup(self, key: int, local_now_us: int) -> CacheEntry | None:
        if key in self.cacheable:
            tr = self.read_trackers.get(key)
            if tr is None:
                tr = self.read_trackers[key] = AccessStats()
            tr.record(local_now_us)
        e = self.entries.get(key)
        if e is None:
            self.stats_misses += 1
            return None
        if e.lease_end_us < local_now_us:
            # lease ran out: lazy self-invalidation
            del self.entries[key]
            if self.observer is not None:
                self.observer.on_remove(key, e, RemoveReason.EXPIRED)
            self.stats_misses += 1
            return None
        self.entries.move_to_end(key)
        self.stats_hits += 1
        if self.observer is not None:
            self.observer.on_hit(key, e)
        return e

    # -- inserts ----------------------------------------------------------

    def _lease_duration_s(self, key: int, w_mean_s: float | None) -> float:
        if self.strategy != CacheStrategy.LEASE:
            return math.inf
        p = self.policy
        if w_mean_s is None:
            return self.max_lease_s  # write rate unknown: longest safe-ish bet
        if p.kind == "mean":
            return min(w_mean_s, self.max_lease_s)
        if p.kind == "p":
            return min(static_lease_for_update_prob(p.update_prob, w_mean_s),
                       self.max_lease_s)
        tr = self.read_trackers.get(key)
        r_mean_s = tr.mean_gap_s() if tr is not None else None
        if r_mean_s is None or r_mean_s <= 0.0:
            return 0.0  # read gap unknown: don't cache yet
        dec = find_ideal_lease(r_mean_s, w_mean_s, max_duration_s=self.max_lease_s)
        return min(dec.duration_s, self.max_lease_s)

    def insert(self, key: int, value: bytes, version_ts: Timestamp,
               w_mean_s: float | None, global_watermark: Timestamp,
               local_now: Timestamp) -> CacheEntry | None:
        """Cache a fetched version; returns the entry, or None if not cached."""
        if key not in self.cacheable:
            return None
        duration_s = self._lease_duration_s(key, w_mean_s)
        if duration_s <= 0.0:
            return None
        fts = version_ts if version_ts > global_watermark else global_watermark
        if math.isinf(duration_s):
            lease_end = NEVER_US
        else:
            lease_end = local_now.micros + int(duration_s * 1e6)
        e = CacheEntry(value, version_ts, fts, lease_end)
        old = self.entries.pop(key, None)
        if old is not None and self.observer is not None:
            self.observer.on_remove(key, old, RemoveReason.REPLACED)
        self.entries[key] = e
        if len(self.entries) > self.capacity:
            victim_key, victim = self.entries.popitem(last=False)
            if self.observer is not None:
                self.observer.on_remove(victim_key, victim, RemoveReason.EVICTED)
        if self.observer is not None:
            self.observer.on_insert(key, e)
        return e

    # -- invalidation -----------------------------------------------------

    def invalidate(self, key: int, reason: RemoveReason) -> bool:
        """Strategy-filtered removal; returns whether an entry was dropped."""
        honored = (
            reason == RemoveReason.OWN_WRITE
            or (reason == RemoveReason.CALLBACK and self.strategy == CacheStrategy.EI)
            or (reason == RemoveReason.STALE_ABORT
                and self.strategy in (CacheStrategy.NAIVE, CacheStrategy.LEASE))
        )
        if not honored:
            return False
        e = self.entries.pop(key, None)
        if e is None:
            return False
        if self.observer is not None:
            self.observer.on_remove(key, e, reason)
        return True

    def clear(self):
        if self.observer is not None:
            for key, e in self.entries.items():
                self.observer.on_remove(key, e, RemoveReason.CLEARED)
        self.entries.clear()
        self.read_trackers.clear()

    # -- freshness reporting ----------------------------------------------

    def cache_freshness(self, local_now: Timestamp) -> Timestamp:
        """Oldest freshness stamp across live entries, clamped non-decreasing.

        Expired lease entries are dead weight and dropped here; without the
        sweep an entry nobody looks up again would pin the value forever. The
        clamp is needed because a fresh insert can carry an fts below the
        resident minimum; reporting optimistically is safe (the validators'
        GC-horizon check turns any resulting under-retention into aborts).
        """
        now_us = local_now.micros
        low: Timestamp | None = None
        expired = [k for k, e in self.entries.items() if e.lease_end_us < now_us]
        for k in expired:
            e = self.entries.pop(k)
            if self.observer is not None:
                self.observer.on_remove(k, e, RemoveReason.EXPIRED)
        for e in self.entries.values():
            if low is None or e.fts < low:
                low = e.fts
        value = local_now if low is None else low
        if value > self._freshness_floor:
            self._freshness_floor = value
        return self._freshness_floor
