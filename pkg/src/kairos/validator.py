"""Optimistic validation over commit timestamps.

Each validator owns a key shard and keeps, per key: the newest commit
timestamp of any transaction that read it (latest_read), the newest installed
version (latest_committed), the retained version history, and at most one
prepared-but-undecided writer. Validation of a transaction at commit
timestamp T:

  reads       no prepared writer on the key, and the version read must still
              be the latest committed (or, for read-only transactions in
              timetravel mode, the latest at or before T in the retained
              history; if pruning removed all versions at or before T the
              read aborts, since it can no longer be judged); a read-write
              transaction must also not read a version from its own future
              (version timestamp past T), which clock skew can manufacture;
  writes      no prepared writer, and T must exceed both latest_read and
              latest_committed, so installed versions only move forward and
              no committed reader ever misses this write.

GC pruning keeps the per-key latest version and read/committed scalars, so
those checks never need pruned state; only the timetravel lookup can run out
of history, and it detects that per key.

On success latest_read rises to T for read keys and the write keys become
prepared; the decision later clears prepared state and, on commit, installs
the new version. Every read-write participant holds a prepared record until
the decision arrives, even when it validated only reads: termination-protocol
queries must distinguish "voted yes, awaiting decision" from "never saw a
prepare", and only the latter proves the coordinator could not have committed.
Abort votes are likewise remembered so those queries can be answered after
the fact.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from typing import NamedTuple

from .types import (
    TS_ZERO, AbortCause, CommitOutcome, Decision, MsgKind, ParticipantStatus,
    Timestamp, TxnKind,
    ctp_query, ctp_status, decision_ack, decision_msg, validate_reply,
)

_COMMIT = CommitOutcome(Decision.COMMIT)


class KeyState:
    __slots__ = ("latest_read", "latest_committed", "versions", "prepared_txn")

    def __init__(self, load_ts: Timestamp):
        self.latest_read = load_ts
        self.latest_committed = load_ts
        self.versions = [load_ts]
        self.prepared_txn: int | None = None


class PreparedTxn(NamedTuple):
    commit_ts: Timestamp
    write_keys: tuple
    participants: tuple


class Validator:
    def __init__(self, load_ts: Timestamp = TS_ZERO, timetravel_ro: bool = False):
        self.load_ts = load_ts
        self.timetravel_ro = timetravel_ro
        self.keys: dict[int, KeyState] = {}
        self.gc_ts = load_ts
        self.prepared: dict[int, PreparedTxn] = {}
        self.voted_abort: set[int] = set()
        self.decided: dict[int, Decision] = {}
        self._multi_version: set[int] = set()

    def _state(self, key: int) -> KeyState:
        st = self.keys.get(key)
        if st is None:
            # unseen key: fresh at the dataset load timestamp
            st = self.keys[key] = KeyState(self.load_ts)
        return st

    # -- phase 1 ----------------------------------------------------------

    def validate(self, txn_id: int, txn_kind: TxnKind, commit_ts: Timestamp,
                 freshness_ts: Timestamp, reads, write_keys,
                 participants: tuple = ()) -> CommitOutcome:
        outcome = self._check(txn_kind, commit_ts, freshness_ts, reads, write_keys)
        if outcome.decision != Decision.COMMIT:
            self.voted_abort.add(txn_id)
            return outcome
        for key, _vts in reads:
            st = self.keys[key]
            if commit_ts > st.latest_read:
                st.latest_read = commit_ts
        if txn_kind == TxnKind.READ_WRITE:
            for key in write_keys:
                self.keys[key].prepared_txn = txn_id
            self.prepared[txn_id] = PreparedTxn(commit_ts, tuple(write_keys),
                                                tuple(participants))
        return _COMMIT

    def _check(self, txn_kind, commit_ts, freshness_ts, reads, write_keys) -> CommitOutcome:
        timetravel = self.timetravel_ro and txn_kind == TxnKind.READ_ONLY
        for key, vts in reads:
            st = self._state(key)
            if st.prepared_txn is not None:
                return CommitOutcome(Decision.ABORT, AbortCause.PREPARED_CONFLICT, key)
            if timetravel:
                # latest retained version at or before the commit timestamp
                vs = st.versions
                i = bisect_right(vs, commit_ts) - 1
                if i < 0:
                    # history before commit_ts was pruned: cannot judge
                    return CommitOutcome(Decision.ABORT, AbortCause.GC_HORIZON, key)
                if vs[i] != vts:
                    return CommitOutcome(Decision.ABORT, AbortCause.STALE_READ, key)
            else:
                if st.latest_committed != vts:
                    return CommitOutcome(Decision.ABORT, AbortCause.STALE_READ, key)
                if txn_kind == TxnKind.READ_WRITE and vts > commit_ts:
                    # skew let this txn read a version newer than its own
                    # commit position; committing would break timestamp order
                    return CommitOutcome(Decision.ABORT, AbortCause.STALE_READ, key)
        for key in write_keys:
            st = self._state(key)
            if st.prepared_txn is not None:
                return CommitOutcome(Decision.ABORT, AbortCause.PREPARED_CONFLICT, key)
            if st.latest_read >= commit_ts:
                return CommitOutcome(Decision.ABORT, AbortCause.WRITE_CONFLICT, key)
            if st.latest_committed >= commit_ts:
                return CommitOutcome(Decision.ABORT, AbortCause.WRITE_CONFLICT, key)
        return _COMMIT

    # -- phase 2 ----------------------------------------------------------

    def apply_decision(self, txn_id: int, decision: Decision,
                       commit_ts: Timestamp) -> None:
        """Idempotent; also records decisions for txns never prepared here."""
        if txn_id in self.decided:
            return
        self.decided[txn_id] = decision
        info = self.prepared.pop(txn_id, None)
        if info is None:
            return
        for key in info.write_keys:
            st = self.keys[key]
            if st.prepared_txn == txn_id:
                st.prepared_txn = None
            if decision == Decision.COMMIT:
                assert commit_ts > st.latest_committed, \
                    "validator admitted a non-monotone install"
                st.latest_committed = commit_ts
                vs = st.versions
                vs.append(commit_ts)
                if vs[0] < self.gc_ts:
                    # prune this key lazily; a horizon sweep over every key
                    # on each watermark broadcast would dominate the run
                    cut = bisect_left(vs, self.gc_ts)
                    del vs[:min(cut, len(vs) - 1)]
                if len(vs) > 1:
                    self._multi_version.add(key)
                elif key in self._multi_version:
                    self._multi_version.discard(key)

    # -- termination protocol ----------------------------------------------

    def ctp_status(self, txn_id: int) -> ParticipantStatus:
        d = self.decided.get(txn_id)
        if d is not None:
            return (ParticipantStatus.RECEIVED_COMMIT if d == Decision.COMMIT
                    else ParticipantStatus.RECEIVED_ABORT)
        if txn_id in self.prepared:
            return ParticipantStatus.PREPARED
        if txn_id in self.voted_abort:
            return ParticipantStatus.RESPONDED_ABORT
        return ParticipantStatus.NO_PREPARE_SEEN

    # -- garbage collection --------------------------------------------------

    def advance_gc(self, new_gc_ts: Timestamp) -> None:
        """Raise the horizon; actual pruning happens per key as installs
        touch it, so frequent watermark broadcasts stay O(1)."""
        if new_gc_ts > self.gc_ts:
            self.gc_ts = new_gc_ts

    def gc(self, new_gc_ts: Timestamp) -> None:
        """Advance the GC horizon and eagerly drop versions below it,
        keeping each key's latest committed version unconditionally."""
        if new_gc_ts < self.gc_ts:
            raise ValueError(f"GC horizon regression: {self.gc_ts} -> {new_gc_ts}")
        self.gc_ts = new_gc_ts
        done = []
        for key in self._multi_version:
            vs = self.keys[key].versions
            cut = bisect_left(vs, new_gc_ts)
            if cut >= len(vs):
                del vs[:-1]  # all below horizon: latest survives regardless
            elif cut:
                del vs[:cut]
            if len(vs) == 1:
                done.append(key)
        self._multi_version.difference_update(done)


def ctp_decide(statuses) -> Decision:
    """Termination rules over participant statuses of an orphaned txn.

    Any participant that saw the coordinator's decision settles it. Failing
    that, a participant that never saw a prepare means the coordinator cannot
    have gathered a full yes-vote, and one that voted no means the decision
    was abort. Only when every participant is prepared must the decision have
    been commit. An empty status set stays pending.
    """
    ss = set(statuses)
    if ParticipantStatus.RECEIVED_COMMIT in ss:
        return Decision.COMMIT
    if ParticipantStatus.RECEIVED_ABORT in ss:
        return Decision.ABORT
    if ParticipantStatus.NO_PREPARE_SEEN in ss:
        return Decision.ABORT
    if ParticipantStatus.RESPONDED_ABORT in ss:
        return Decision.ABORT
    if ss:
        return Decision.COMMIT  # unanimously prepared
    return Decision.PENDING


class _CtpRun:
    __slots__ = ("commit_ts", "participants", "statuses", "queriers")

    def __init__(self, commit_ts, participants):
        self.commit_ts = commit_ts
        self.participants = tuple(participants)
        self.statuses: dict[int, ParticipantStatus] = {}
        self.queriers: set[int] = set()


class ValidatorNode:
    """Message-driven wrapper around a Validator shard.

    Besides voting and applying decisions, the node watches its own prepared
    transactions: if a decision fails to arrive it nudges the transaction's
    backup coordinator, the lowest-id participant. When this node *is* the
    backup coordinator it polls every participant for status, applies the
    termination rules, and broadcasts the decision to participants and to
    whoever asked (orphaned storage primaries ask too).
    """

    def __init__(self, env, node_id: int, core: Validator | None = None, *,
                 ctp_timeout_us: int = 50_000):
        self.env = env
        self.node_id = node_id
        self.core = core if core is not None else Validator()
        self.ctp_timeout_us = ctp_timeout_us
        self._runs: dict[int, _CtpRun] = {}

    def handle(self, src: int, msg) -> None:
        kind = msg.kind
        if kind == MsgKind.VALIDATE:
            self._on_validate(src, msg)
        elif kind == MsgKind.DECISION:
            self._on_decision(src, msg)
        elif kind == MsgKind.CTP_QUERY:
            self._on_ctp_query(src, msg)
        elif kind == MsgKind.CTP_STATUS:
            self._on_ctp_status(src, msg)
        elif kind == MsgKind.WATERMARK_UPDATE:
            self.core.advance_gc(msg.gc_ts)
        elif kind == MsgKind.DECISION_ACK:
            pass  # fire-and-forget broadcasts don't track acks
        else:
            raise ValueError(f"validator node got unexpected kind {kind}")

    def _on_validate(self, src: int, msg) -> None:
        out = self.core.validate(msg.txn_id, msg.txn_kind, msg.commit_ts,
                                 msg.freshness_ts, msg.reads, msg.write_keys,
                                 msg.participants)
        key = out.key if out.key is not None else -1
        self.env.send(src, validate_reply(msg.txn_id, out.decision, out.cause, key))
        if out.decision == Decision.COMMIT and msg.participants \
                and msg.txn_id in self.core.prepared:
            self.env.after(self.ctp_timeout_us, self._ctp_check, msg.txn_id)

    def _on_decision(self, src: int, msg) -> None:
        self.env.send(src, decision_ack(msg.txn_id))
        self.core.apply_decision(msg.txn_id, msg.decision, msg.commit_ts)
        self._runs.pop(msg.txn_id, None)

    def _ctp_check(self, txn_id: int) -> None:
        info = self.core.prepared.get(txn_id)
        if info is None:
            return  # decided meanwhile
        backup = min(info.participants)
        if backup == self.node_id:
            self._resolve(txn_id, info.commit_ts, info.participants)
        else:
            self.env.send(backup, ctp_query(txn_id, info.commit_ts,
                                            info.participants))
        self.env.after(self.ctp_timeout_us, self._ctp_check, txn_id)

    # -- backup-coordinator side ------------------------------------------------

    def _on_ctp_query(self, src: int, msg) -> None:
        if self.node_id != min(msg.participants):
            # the backup coordinator is asking for this node's status
            self.env.send(src, ctp_status(msg.txn_id, self.core.ctp_status(msg.txn_id)))
            return
        self._resolve(msg.txn_id, msg.commit_ts, msg.participants, querier=src)

    def _resolve(self, txn_id: int, commit_ts, participants,
                 querier: int | None = None) -> None:
        d = self.core.decided.get(txn_id)
        if d is not None:
            if querier is not None:
                self.env.send(querier, decision_msg(txn_id, d, commit_ts))
            return
        run = self._runs.get(txn_id)
        if run is not None:
            if querier is not None:
                run.queriers.add(querier)
            return
        run = self._runs[txn_id] = _CtpRun(commit_ts, participants)
        if querier is not None:
            run.queriers.add(querier)
        run.statuses[self.node_id] = self.core.ctp_status(txn_id)
        query = ctp_query(txn_id, commit_ts, run.participants)
        for p in run.participants:
            if p != self.node_id:
                self.env.send(p, query)
        self._maybe_finish(txn_id, run)

    def _on_ctp_status(self, src: int, msg) -> None:
        run = self._runs.get(msg.txn_id)
        if run is None:
            return
        run.statuses[src] = msg.status
        self._maybe_finish(msg.txn_id, run)

    def _maybe_finish(self, txn_id: int, run: _CtpRun) -> None:
        if len(run.statuses) < len(run.participants):
            return
        decision = ctp_decide(run.statuses.values())
        assert decision != Decision.PENDING
        del self._runs[txn_id]
        self.core.apply_decision(txn_id, decision, run.commit_ts)
        note = decision_msg(txn_id, decision, run.commit_ts)
        for dst in set(run.participants).union(run.queriers) - {self.node_id}:
            self.env.send(dst, note)
