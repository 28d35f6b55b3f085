"""Storage replicas: a primary per shard plus passive backups.

The primary buffers a transaction's writes on Replicate, fans them out to its
backups, and acks the coordinator once a quorum of backups confirmed. The
write stays pending until the coordinator's Decision arrives; commit installs
each value if its commit timestamp beats the currently installed version
(decisions from different coordinators can arrive out of order), abort just
drops the buffer. Installs feed a per-key inter-write EWMA that GetReply
carries back to clients for lease sizing, and, when sharer tracking is on,
trigger Invalidate callbacks to every client that fetched the key since its
last write.

The primary is itself a termination-protocol participant: a transaction's
writes are not durable anywhere until the Replicate lands here, so the backup
coordinator polls primaries along with validators, and "never saw the
replicate" vetoes commit. If a Decision never arrives (coordinator crash), a
pending-write timer fires and the primary asks the transaction's backup
coordinator, the lowest-id participant, with a CtpQuery; the eventual
Decision reply resolves the buffer the same way.

Nodes talk to the world through an env object: env.send(dst, msg) and
env.after(delay_us, fn, *args).
"""

from __future__ import annotations

from .lease import AccessStats
from .types import (
    TS_ZERO, Decision, MsgKind, ParticipantStatus, Timestamp,
    backup_ack, backup_replicate, ctp_query, ctp_status, decision_ack,
    decision_msg, get_reply, invalidate, replicate_reply,
)


class _Pending:
    __slots__ = ("commit_ts", "writes", "participants", "coordinator",
                 "acks", "replied")

    def __init__(self, commit_ts, writes, participants, coordinator):
        self.commit_ts = commit_ts
        self.writes = writes
        self.participants = participants
        self.coordinator = coordinator
        self.acks: set[int] = set()
        self.replied = False


class StorageNode:
    """Primary replica for one shard."""

    def __init__(self, env, node_id: int, backups: tuple[int, ...],
                 ack_quorum: int, *, load_ts: Timestamp = TS_ZERO,
                 initial_value: bytes = b"\x00", track_sharers: bool = False,
                 cacheable: frozenset | None = None,
                 ctp_timeout_us: int = 50_000, recorder=None):
        if ack_quorum > len(backups):
            raise ValueError("quorum larger than backup set")
        self.env = env
        self.node_id = node_id
        self.backups = backups
        self.ack_quorum = ack_quorum
        self.load_ts = load_ts
        self.initial_value = initial_value
        self.track_sharers = track_sharers
        self.cacheable = cacheable
        self.ctp_timeout_us = ctp_timeout_us
        self.recorder = recorder
        self.kv: dict[int, tuple[bytes, Timestamp]] = {}
        self.write_stats: dict[int, AccessStats] = {}
        self.sharers: dict[int, set[int]] = {}
        self.pending: dict[int, _Pending] = {}
        self.decided: dict[int, Decision] = {}

    def handle(self, src: int, msg) -> None:
        kind = msg.kind
        if kind == MsgKind.GET:
            self._on_get(src, msg)
        elif kind == MsgKind.REPLICATE:
            self._on_replicate(src, msg)
        elif kind == MsgKind.BACKUP_ACK:
            self._on_backup_ack(src, msg)
        elif kind == MsgKind.DECISION:
            self._on_decision(src, msg)
        elif kind == MsgKind.CTP_QUERY:
            self.env.send(src, ctp_status(msg.txn_id,
                                          self.ctp_status(msg.txn_id)))
        else:
            raise ValueError(f"storage node got unexpected kind {kind}")

    # -- reads ---------------------------------------------------------------

    def _on_get(self, src: int, msg) -> None:
        key = msg.key
        value, vts = self.kv.get(key, (self.initial_value, self.load_ts))
        stats = self.write_stats.get(key)
        mean_s = stats.mean_gap_s() if stats is not None else None
        w_mean_us = mean_s * 1e6 if mean_s is not None else -1.0
        if self.track_sharers and (self.cacheable is None or key in self.cacheable):
            self.sharers.setdefault(key, set()).add(src)
        self.env.send(src, get_reply(msg.txn_id, key, value, vts, w_mean_us))

    # -- replication ---------------------------------------------------------

    def _on_replicate(self, src: int, msg) -> None:
        p = _Pending(msg.commit_ts, msg.writes, msg.participants, src)
        self.pending[msg.txn_id] = p
        if self.ack_quorum == 0:
            p.replied = True
            self.env.send(src, replicate_reply(msg.txn_id, True))
        else:
            for b in self.backups:
                self.env.send(b, backup_replicate(msg.txn_id, msg.writes))
        self.env.after(self.ctp_timeout_us, self._ctp_check, msg.txn_id)

    def _on_backup_ack(self, src: int, msg) -> None:
        p = self.pending.get(msg.txn_id)
        if p is None or p.replied:
            return
        p.acks.add(src)
        if len(p.acks) >= self.ack_quorum:
            p.replied = True
            self.env.send(p.coordinator, replicate_reply(msg.txn_id, True))

    # -- decisions -------------------------------------------------------------

    def _on_decision(self, src: int, msg) -> None:
        self.env.send(src, decision_ack(msg.txn_id))
        if msg.txn_id in self.decided:
            return
        self.decided[msg.txn_id] = Decision(msg.decision)
        p = self.pending.pop(msg.txn_id, None)
        if p is None:
            return
        if msg.decision == Decision.COMMIT:
            self._install(msg.txn_id, p.writes, msg.commit_ts, p.coordinator)
        for b in self.backups:
            self.env.send(b, decision_msg(msg.txn_id, msg.decision, msg.commit_ts))

    def _install(self, txn_id: int, writes, commit_ts: Timestamp,
                 writer: int) -> None:
        for key, value in writes:
            current = self.kv.get(key)
            if current is None or commit_ts > current[1]:
                self.kv[key] = (value, commit_ts)
            stats = self.write_stats.get(key)
            if stats is None:
                stats = self.write_stats[key] = AccessStats()
            stats.record(commit_ts.micros)
            if self.recorder is not None:
                self.recorder.version_installed(txn_id, key, commit_ts)
            if self.track_sharers:
                holders = self.sharers.get(key)
                if holders:
                    note = invalidate(key, commit_ts)
                    for client in holders:
                        if client != writer:
                            self.env.send(client, note)
                    holders.clear()

    # -- termination protocol ----------------------------------------------------

    def ctp_status(self, txn_id: int) -> ParticipantStatus:
        d = self.decided.get(txn_id)
        if d is not None:
            return (ParticipantStatus.RECEIVED_COMMIT if d == Decision.COMMIT
                    else ParticipantStatus.RECEIVED_ABORT)
        if txn_id in self.pending:
            # the write data is here; committing cannot lose it
            return ParticipantStatus.PREPARED
        return ParticipantStatus.NO_PREPARE_SEEN

    def _ctp_check(self, txn_id: int) -> None:
        p = self.pending.get(txn_id)
        if p is None:
            return
        backup_coord = min(p.participants)
        self.env.send(backup_coord,
                      ctp_query(txn_id, p.commit_ts, p.participants))
        self.env.after(self.ctp_timeout_us, self._ctp_check, txn_id)


class BackupNode:
    """Passive backup replica: buffers writes, acks, installs on commit."""

    def __init__(self, env, node_id: int, primary: int, *,
                 load_ts: Timestamp = TS_ZERO, initial_value: bytes = b"\x00"):
        self.env = env
        self.node_id = node_id
        self.primary = primary
        self.load_ts = load_ts
        self.initial_value = initial_value
        self.kv: dict[int, tuple[bytes, Timestamp]] = {}
        self.pending: dict[int, tuple] = {}
        self.decided: set[int] = set()

    def handle(self, src: int, msg) -> None:
        kind = msg.kind
        if kind == MsgKind.BACKUP_REPLICATE:
            self.pending[msg.txn_id] = msg.writes
            self.env.send(src, backup_ack(msg.txn_id))
        elif kind == MsgKind.DECISION:
            if msg.txn_id in self.decided:
                return
            self.decided.add(msg.txn_id)
            writes = self.pending.pop(msg.txn_id, None)
            if writes is None or msg.decision != Decision.COMMIT:
                return
            for key, value in writes:
                current = self.kv.get(key)
                if current is None or msg.commit_ts > current[1]:
                    self.kv[key] = (value, msg.commit_ts)
        else:
            raise ValueError(f"backup node got unexpected kind {kind}")
