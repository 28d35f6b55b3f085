"""Transaction coordinator: executes the workload and drives commit.

Reads resolve against the local cache first and fall back to a parallel
round of Gets to the owning primaries. Read-only transactions then validate
in a single round at a commit timestamp taken from what they read: the
maximum freshness bound across the read set, so the position they claim in
the timestamp order is one their reads can actually support. Read-write
transactions draw their commit timestamp from the local (possibly skewed)
physical clock and run two-phase commit with phase one fanned out in
parallel: Validate to every involved validator and Replicate to every
written shard's primary. All yes-votes commit; the decision is logged with
the recorder (that log is the coordinator's durable word), then broadcast
and retried until every participant acked.

The client also keeps the local watermark machinery honest: a read-write
transaction stays in the in-flight set from commit-timestamp assignment
until the decision is fully acked, and periodic freshness reports carry the
watermark and the cache freshness floor to the master. Reported watermarks
are clamped monotone; the clock being monotone keeps the clamp sound.

Crash injection for termination-protocol experiments hooks the boundaries
between protocol steps: a planned crash point counts message sends and kills
the node mid-transaction, leaving participants to finish the job.
"""

from __future__ import annotations

from .cache import ClientCache, RemoveReason
from .clock import SkewedClock
from .metrics import TxnRecord
from .types import (
    TS_ZERO, AbortCause, Decision, MsgKind, Timestamp, TxnKind,
    decision_msg, freshness_broadcast, get, replicate, shard_of, validate,
)
from .watermark import local_watermark

_READ, _VOTE, _DECIDED = 0, 1, 2


class _TxnRun:
    __slots__ = ("txn_id", "kind", "keys", "write_set", "read_set",
                 "pending_gets", "start_us", "commit_ts", "freshness_ts",
                 "phase", "votes_pending", "vote_failed", "acks_pending",
                 "participants", "primary_targets", "boundary", "planned")

    def __init__(self, txn_id, kind, keys, start_us):
        self.txn_id = txn_id
        self.kind = kind
        self.keys = keys
        self.write_set = {}
        self.read_set = []            # (key, version_ts, freshness_ts)
        self.pending_gets = set()
        self.start_us = start_us
        self.commit_ts = TS_ZERO
        self.freshness_ts = TS_ZERO
        self.phase = _READ
        self.votes_pending = set()
        self.vote_failed = None       # (cause, key) of the first no-vote
        self.acks_pending = set()
        self.participants = ()
        self.primary_targets = ()
        self.boundary = 0
        self.planned = None


class ClientNode:
    def __init__(self, env, node_id: int, *, clock: SkewedClock,
                 stream, cache: ClientCache, n_shards: int,
                 validators: tuple[int, ...], primaries: tuple[int, ...],
                 master: int | None, recorder, value_size: int = 16,
                 report_interval_us: int = 10_000,
                 txn_timeout_us: int = 1_000_000,
                 decision_retry_us: int = 20_000,
                 crash_plan=None, incarnation: int = 0):
        if len(validators) != n_shards or len(primaries) != n_shards:
            raise ValueError("one validator and one primary per shard")
        self.env = env
        self.node_id = node_id
        self.clock = clock
        self.stream = stream
        self.cache = cache
        self.n_shards = n_shards
        self.validators = validators
        self.primaries = primaries
        self.master = master
        self.recorder = recorder
        self.value_size = value_size
        self.report_interval_us = report_interval_us
        self.txn_timeout_us = txn_timeout_us
        self.decision_retry_us = decision_retry_us
        self.crash_plan = crash_plan
        if not 0 <= incarnation < 256:
            raise ValueError("incarnation must fit the txn-id field")
        self.incarnation = incarnation
        self.txns: dict[int, _TxnRun] = {}
        self.in_flight_rw: dict[int, Timestamp] = {}
        self.wm_view = TS_ZERO
        self.crashed = False
        self.quiesced = False
        self._seq = 0
        self._last_reported_lw = TS_ZERO

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        if self.stream is not None:
            self._schedule_next()
        if self.master is not None:
            self.env.after(self.report_interval_us, self._report)
        # one recurring sweep instead of a timer per transaction: stuck
        # transactions are rare, so the heap should not carry one entry
        # per in-flight txn just to time them out
        self.env.after(max(self.txn_timeout_us // 4, 1), self._timeout_sweep)

    def quiesce(self) -> None:
        """Stop drawing new transactions; in-flight work runs to completion."""
        self.quiesced = True

    def _now_ts(self) -> Timestamp:
        return self.clock.now(self.env.true_now())

    def _next_txn_id(self) -> int:
        self._seq += 1
        return (self.node_id << 40) | (self.incarnation << 32) | self._seq

    def _schedule_next(self) -> None:
        spec = self.stream.next_txn()
        self.env.after(spec.gap_us, self._start_txn, spec)

    # -- transaction execution -----------------------------------------------------

    def _start_txn(self, spec) -> None:
        if self.crashed or self.quiesced:
            return
        self._schedule_next()
        self.begin(TxnKind(spec.kind), spec.keys)

    def begin(self, kind: TxnKind, keys) -> None:
        if self.crashed:
            return
        txn_id = self._next_txn_id()
        run = _TxnRun(txn_id, kind, tuple(keys), self.env.true_now())
        self.txns[txn_id] = run
        if kind == TxnKind.READ_WRITE:
            for key in run.keys:
                run.write_set[key] = self._value_for(txn_id, key)
            if self.crash_plan is not None:
                run.planned = self.crash_plan(
                    txn_id, self._boundary_count(run))
        now_us = self._now_ts().micros
        for key in run.keys:
            entry = self.cache.lookup(key, now_us)
            if entry is not None:
                run.read_set.append((key, entry.version_ts, entry.fts))
            else:
                run.pending_gets.add(key)
        if run.pending_gets:
            for key in sorted(run.pending_gets):
                self.env.send(self.primaries[shard_of(key, self.n_shards)],
                              get(txn_id, key))
        else:
            self._commit_phase(run)

    def _value_for(self, txn_id: int, key: int) -> bytes:
        x = (txn_id * 0x9E3779B97F4A7C15 ^ key * 0xBF58476D1CE4E5B9) \
            & 0xFFFFFFFFFFFFFFFF
        raw = x.to_bytes(8, "little")
        if self.value_size <= 8:
            return raw[:self.value_size]
        return raw.ljust(self.value_size, b"\x00")

    def _on_get_reply(self, src: int, msg) -> None:
        run = self.txns.get(msg.txn_id)
        if run is None or run.phase != _READ or msg.key not in run.pending_gets:
            return
        run.pending_gets.discard(msg.key)
        vts = msg.version_ts
        fts = vts if vts > self.wm_view else self.wm_view
        run.read_set.append((msg.key, vts, fts))
        w_mean_s = msg.w_mean_us / 1e6 if msg.w_mean_us >= 0.0 else None
        self.cache.insert(msg.key, msg.value, vts, w_mean_s,
                          self.wm_view, self._now_ts())
        if not run.pending_gets:
            self._commit_phase(run)

    # -- commit ----------------------------------------------------------------

    def _commit_phase(self, run: _TxnRun) -> None:
        run.phase = _VOTE
        now = self._now_ts()
        if run.read_set:
            run.freshness_ts = min(f for _, _, f in run.read_set)
        else:
            run.freshness_ts = now
        by_shard_reads: dict[int, list] = {}
        for key, vts, _ in run.read_set:
            by_shard_reads.setdefault(shard_of(key, self.n_shards), []) \
                .append((key, vts))
        if run.kind == TxnKind.READ_ONLY:
            run.commit_ts = max((f for _, _, f in run.read_set), default=now)
            for shard in sorted(by_shard_reads):
                v = self.validators[shard]
                run.votes_pending.add(v)
                self.env.send(v, validate(
                    run.txn_id, run.kind, run.commit_ts, run.freshness_ts,
                    tuple(by_shard_reads[shard]), (), ()))
            return
        run.commit_ts = now
        self.in_flight_rw[run.txn_id] = run.commit_ts
        by_shard_writes: dict[int, list] = {}
        for key in run.write_set:
            by_shard_writes.setdefault(shard_of(key, self.n_shards), []) \
                .append(key)
        v_shards = sorted(set(by_shard_reads) | set(by_shard_writes))
        run.primary_targets = tuple(self.primaries[s]
                                    for s in sorted(by_shard_writes))
        # 2PC participants: validators and written primaries alike. A primary
        # that never got its Replicate must be able to veto a termination-
        # protocol commit, or the decision could outrun the write data.
        run.participants = tuple(sorted(
            {self.validators[s] for s in v_shards} | set(run.primary_targets)))
        run.votes_pending = set(run.participants)
        for shard in v_shards:
            if self._maybe_crash(run):
                return
            self.env.send(self.validators[shard], validate(
                run.txn_id, run.kind, run.commit_ts, run.freshness_ts,
                tuple(by_shard_reads.get(shard, ())),
                tuple(sorted(by_shard_writes.get(shard, ()))),
                run.participants))
        for shard in sorted(by_shard_writes):
            if self._maybe_crash(run):
                return
            writes = tuple((k, run.write_set[k])
                           for k in sorted(by_shard_writes[shard]))
            self.env.send(self.primaries[shard], replicate(
                run.txn_id, run.commit_ts, writes, run.participants))

    def _boundary_count(self, run: _TxnRun) -> int:
        shards = {shard_of(k, self.n_shards) for k in run.keys}
        n_targets = 2 * len(shards)  # validators + primaries, reads == writes
        return 2 * n_targets + 2     # phase-1 sends, log, phase-2 sends, wait

    def _maybe_crash(self, run: _TxnRun) -> bool:
        if run.planned is None:
            return False
        if run.boundary == run.planned:
            self.crashed = True
            self.recorder.crashed(self.node_id, run.txn_id, run.boundary)
            self.env.crash_self()
            return True
        run.boundary += 1
        return False

    def _on_validate_reply(self, src: int, msg) -> None:
        run = self.txns.get(msg.txn_id)
        if run is None or run.phase != _VOTE or src not in run.votes_pending:
            return
        run.votes_pending.discard(src)
        if msg.decision != Decision.COMMIT and run.vote_failed is None:
            run.vote_failed = (AbortCause(msg.cause),
                               msg.key if msg.key >= 0 else None)
        if not run.votes_pending:
            self._decide(run)

    def _on_replicate_reply(self, src: int, msg) -> None:
        run = self.txns.get(msg.txn_id)
        if run is None or run.phase != _VOTE or src not in run.votes_pending:
            return
        run.votes_pending.discard(src)
        if not msg.ok and run.vote_failed is None:
            run.vote_failed = (AbortCause.COORDINATOR_FAILURE, None)
        if not run.votes_pending:
            self._decide(run)

    def _decide(self, run: _TxnRun) -> None:
        if self._maybe_crash(run):   # crash before the decision exists
            return
        if run.vote_failed is None:
            decision, cause, bad_key = Decision.COMMIT, AbortCause.NONE, None
        else:
            decision = Decision.ABORT
            cause, bad_key = run.vote_failed
        run.phase = _DECIDED
        self.recorder.txn_decided(TxnRecord(
            run.txn_id, self.node_id, int(run.kind), int(decision), int(cause),
            run.commit_ts, run.freshness_ts,
            tuple((k, v) for k, v, _ in run.read_set),
            tuple(sorted(run.write_set)), run.start_us, self.env.true_now()))
        if decision == Decision.COMMIT:
            for key in run.write_set:
                self.cache.invalidate(key, RemoveReason.OWN_WRITE)
        elif (cause in (AbortCause.STALE_READ, AbortCause.GC_HORIZON)
                and bad_key is not None):
            # a too-old cached basis would just re-abort the retry
            self.cache.invalidate(bad_key, RemoveReason.STALE_ABORT)
        if run.kind == TxnKind.READ_ONLY:
            self.txns.pop(run.txn_id, None)
            return
        run.acks_pending = set(run.participants)
        if not run.acks_pending:
            # timed out before phase 1: nothing out there to clean up
            self.txns.pop(run.txn_id, None)
            self.in_flight_rw.pop(run.txn_id, None)
            return
        note = decision_msg(run.txn_id, decision, run.commit_ts)
        for dst in run.participants:
            if self._maybe_crash(run):
                return
            self.env.send(dst, note)
        if self._maybe_crash(run):   # crash with everything sent, acks pending
            return
        self.env.after(self.decision_retry_us, self._retry_decisions,
                       run.txn_id, decision)

    def _on_decision_ack(self, src: int, msg) -> None:
        run = self.txns.get(msg.txn_id)
        if run is None or run.phase != _DECIDED:
            return
        run.acks_pending.discard(src)
        if not run.acks_pending:
            self.txns.pop(run.txn_id, None)
            self.in_flight_rw.pop(run.txn_id, None)

    def _retry_decisions(self, txn_id: int, decision: Decision) -> None:
        run = self.txns.get(txn_id)
        if run is None or self.crashed:
            return
        note = decision_msg(txn_id, decision, run.commit_ts)
        for dst in run.acks_pending:
            self.env.send(dst, note)
        self.env.after(self.decision_retry_us, self._retry_decisions,
                       txn_id, decision)

    def _timeout_sweep(self) -> None:
        if self.crashed:
            return
        cutoff = self.env.true_now() - self.txn_timeout_us
        stuck = [run for run in self.txns.values()
                 if run.phase != _DECIDED and run.start_us <= cutoff]
        for run in stuck:
            if run.vote_failed is None:
                run.vote_failed = (AbortCause.COORDINATOR_FAILURE, None)
            self._decide(run)
        self.env.after(max(self.txn_timeout_us // 4, 1), self._timeout_sweep)

    # -- background duties ------------------------------------------------------

    def _report(self) -> None:
        if self.crashed:
            return
        now = self._now_ts()
        lw = local_watermark(self.in_flight_rw.values(), now)
        if lw < self._last_reported_lw:
            lw = self._last_reported_lw
        self._last_reported_lw = lw
        cf = self.cache.cache_freshness(self._now_ts())
        self.env.send(self.master, freshness_broadcast(self.node_id, lw, cf))
        self.env.after(self.report_interval_us, self._report)

    # -- message dispatch ------------------------------------------------------------

    def handle(self, src: int, msg) -> None:
        if self.crashed:
            return
        kind = msg.kind
        if kind == MsgKind.GET_REPLY:
            self._on_get_reply(src, msg)
        elif kind == MsgKind.VALIDATE_REPLY:
            self._on_validate_reply(src, msg)
        elif kind == MsgKind.REPLICATE_REPLY:
            self._on_replicate_reply(src, msg)
        elif kind == MsgKind.DECISION_ACK:
            self._on_decision_ack(src, msg)
        elif kind == MsgKind.INVALIDATE:
            self.cache.invalidate(msg.key, RemoveReason.CALLBACK)
        elif kind == MsgKind.WATERMARK_UPDATE:
            if msg.global_watermark > self.wm_view:
                self.wm_view = msg.global_watermark
        else:
            raise ValueError(f"client got unexpected kind {kind}")
