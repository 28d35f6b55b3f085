"""Run instrumentation: transaction records, counters, staleness tracking.

The recorder is omniscient: clients report every decided transaction, primaries
report every installed version, and it doubles as the cache observer for every
client. That lets it mark the exact moments a cached copy went stale (a newer
version became readable at the primary while the copy sat in some cache) and
stopped being served. The interval between the two is a stale window; their
distribution is how the invalidation strategies are told apart. A lease entry
stops being served at lease expiry even though it is physically dropped later,
so each held copy carries a serving deadline in true time and window ends are
capped by it. Hits are classified fresh or stale against the latest installed
version at the moment of the hit.

The recorder also holds the durable decision log: the coordinator's logged
decision per transaction, written at decision time before any decision
message goes out. Crash experiments compare the log against what the
termination protocol decided at the participants.

A coordinator can crash after sending its prepares but before logging, and
the termination protocol may then commit the transaction behind its back. The
installs still reach the recorder, so finalize() reconciles them into the
log and the history as committed write-only records; without them the replay
check would flag every reader of those installed versions.
"""

from __future__ import annotations

from collections import Counter
from typing import NamedTuple

from .types import TS_ZERO, Decision, Timestamp, TxnKind


class TxnRecord(NamedTuple):
    txn_id: int
    client: int
    kind: int
    decision: int
    cause: int
    commit_ts: Timestamp
    freshness_ts: Timestamp
    reads: tuple        # ((key, version_ts), ...)
    write_keys: tuple
    start_us: int       # true time
    decided_us: int     # true time


class Recorder:
    def __init__(self):
        self.history: list[TxnRecord] = []
        self.decision_of: dict[int, Decision] = {}
        self.committed = 0
        self.aborted = 0
        self.commits_by_kind: Counter = Counter()
        self.aborts_by_cause: Counter = Counter()
        self.latency_sum_us: Counter = Counter()
        self.latency_n: Counter = Counter()
        self.crash_events: list[tuple[int, int, int]] = []  # (client, txn, boundary)
        self.installed_txns: set[int] = set()
        # installs with no logged decision: txn -> (commit_ts, keys)
        self.orphan_installs: dict[int, tuple[Timestamp, list[int]]] = {}
        # staleness bookkeeping
        self.latest_version: dict[int, Timestamp] = {}
        # key -> client -> (version_ts, serving deadline in true micros)
        self.holders: dict[int, dict[int, tuple[Timestamp, int]]] = {}
        # (client, key) -> (window start, serving deadline)
        self.open_stale: dict[tuple[int, int], tuple[int, int]] = {}
        self.stale_windows_us: list[int] = []
        self.fresh_hits = 0
        self.stale_hits = 0
        self._now = lambda: 0
        self.target_commits: int | None = None
        self.target_decided: int | None = None
        self.on_target = None
        self.keep_history = True

    def bind_clock(self, now_fn) -> None:
        self._now = now_fn

    # -- transaction outcomes ---------------------------------------------

    def txn_decided(self, rec: TxnRecord) -> None:
        self.decision_of[rec.txn_id] = Decision(rec.decision)
        if self.keep_history:
            self.history.append(rec)
        self.latency_sum_us[rec.kind] += rec.decided_us - rec.start_us
        self.latency_n[rec.kind] += 1
        if rec.decision == Decision.COMMIT:
            self.committed += 1
            self.commits_by_kind[rec.kind] += 1
        else:
            self.aborted += 1
            self.aborts_by_cause[rec.cause] += 1
        if self.on_target is not None:
            if (self.target_commits is not None
                    and self.committed >= self.target_commits) or \
               (self.target_decided is not None
                    and self.committed + self.aborted >= self.target_decided):
                self.on_target()

    def version_installed(self, txn_id: int, key: int,
                          commit_ts: Timestamp) -> None:
        """A primary made this version readable: held older copies go stale."""
        self.installed_txns.add(txn_id)
        if txn_id not in self.decision_of:
            # committed by the termination protocol; the coordinator died
            # before logging. Kept for reconciliation at finalize.
            self.orphan_installs.setdefault(txn_id, (commit_ts, []))[1] \
                .append(key)
        if commit_ts > self.latest_version.get(key, TS_ZERO):
            self.latest_version[key] = commit_ts
        held = self.holders.get(key)
        if held:
            now = self._now()
            for client, (vts, cap_us) in held.items():
                if vts < commit_ts and cap_us > now:
                    self.open_stale.setdefault((client, key), (now, cap_us))

    def crashed(self, client: int, txn_id: int, boundary: int) -> None:
        self.crash_events.append((client, txn_id, boundary))

    # -- cache observation ---------------------------------------------------

    def cache_observer(self, client: int, skew_us: int = 0) -> "_CacheObserver":
        """The skew converts the cache's local lease deadlines to true time."""
        return _CacheObserver(self, client, skew_us)

    def _on_insert(self, client: int, key: int, vts: Timestamp,
                   cap_us: int) -> None:
        self.holders.setdefault(key, {})[client] = (vts, cap_us)
        if vts < self.latest_version.get(key, TS_ZERO):
            # fetched copy was already superseded when it landed
            now = self._now()
            if cap_us > now:
                self.open_stale.setdefault((client, key), (now, cap_us))

    def _on_remove(self, client: int, key: int) -> None:
        held = self.holders.get(key)
        if held is not None:
            held.pop(client, None)
        span = self.open_stale.pop((client, key), None)
        if span is not None:
            start, cap_us = span
            self.stale_windows_us.append(min(self._now(), cap_us) - start)

    def _on_hit(self, client: int, key: int, vts: Timestamp) -> None:
        if vts < self.latest_version.get(key, TS_ZERO):
            self.stale_hits += 1
        else:
            self.fresh_hits += 1

    def finalize(self, end_us: int) -> None:
        """Close open stale windows; adopt termination-protocol commits."""
        for start, cap_us in self.open_stale.values():
            self.stale_windows_us.append(min(end_us, cap_us) - start)
        self.open_stale.clear()
        for txn_id, (commit_ts, keys) in self.orphan_installs.items():
            if txn_id in self.decision_of:
                continue
            self.decision_of[txn_id] = Decision.COMMIT
            self.committed += 1
            self.commits_by_kind[int(TxnKind.READ_WRITE)] += 1
            if self.keep_history:
                # reads and timings died with the coordinator; the writes
                # are what the replay check needs
                self.history.append(TxnRecord(
                    txn_id, txn_id >> 40, int(TxnKind.READ_WRITE),
                    int(Decision.COMMIT), 0, commit_ts, commit_ts,
                    (), tuple(sorted(keys)), end_us, end_us))
        self.orphan_installs.clear()

    # -- summaries ---------------------------------------------------------------

    def mean_latency_us(self, kind: TxnKind) -> float | None:
        n = self.latency_n[kind]
        return self.latency_sum_us[kind] / n if n else None

    def mean_stale_window_us(self) -> float | None:
        w = self.stale_windows_us
        return sum(w) / len(w) if w else None


class _CacheObserver:
    __slots__ = ("recorder", "client", "skew_us")

    def __init__(self, recorder: Recorder, client: int, skew_us: int):
        self.recorder = recorder
        self.client = client
        self.skew_us = skew_us

    def on_insert(self, key, entry):
        self.recorder._on_insert(self.client, key, entry.version_ts,
                                 entry.lease_end_us - self.skew_us)

    def on_remove(self, key, entry, reason):
        self.recorder._on_remove(self.client, key)

    def on_hit(self, key, entry):
        self.recorder._on_hit(self.client, key, entry.version_ts)
