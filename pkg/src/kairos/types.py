"""Core value types shared by every component.

Timestamps are triples (micros, node, seq) compared lexicographically, which
gives a total order across all nodes: physical micros first, then the node id,
then a per-node sequence number that breaks same-microsecond ties. Keys are
unsigned 64-bit ints. Values are opaque byte strings with a configured size cap.
"""

from __future__ import annotations

import enum
from typing import NamedTuple

MAX_VALUE_BYTES = 1024

_MASK64 = (1 << 64) - 1


class Timestamp(NamedTuple):
    micros: int
    node: int
    seq: int


# Dataset load timestamp: every key starts at this version.
TS_ZERO = Timestamp(0, 0, 0)

# +inf sentinel for timestamp comparisons.
TS_MAX = Timestamp(1 << 62, 1 << 30, 1 << 30)


def ts_compare(a: Timestamp, b: Timestamp) -> int:
    """-1, 0, or 1 as a sorts before, equal to, or after b."""
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def ts_before(ts: Timestamp) -> Timestamp:
    """Largest whole-microsecond timestamp strictly below ts (floor 0).

    Used for watermark arithmetic: "everything at or below this microsecond is
    done". Dropping node/seq is conservative.
    """
    return Timestamp(max(0, ts.micros - 1), 0, 0)


def _mix64(x: int) -> int:
    # splitmix64 finalizer: stable across processes, unlike hash().
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def shard_of(key: int, n_shards: int) -> int:
    """Deterministic, near-uniform shard assignment for a key."""
    if n_shards <= 0:
        raise ValueError("n_shards must be positive")
    return _mix64(key) % n_shards


class VersionedValue(NamedTuple):
    value: bytes
    version_ts: Timestamp


def check_value(value: bytes, limit: int = MAX_VALUE_BYTES) -> bytes:
    if len(value) > limit:
        raise ValueError(f"value of {len(value)} bytes exceeds limit {limit}")
    return value


class TxnKind(enum.IntEnum):
    READ_ONLY = 0
    READ_WRITE = 1


class Decision(enum.IntEnum):
    COMMIT = 0
    ABORT = 1
    PENDING = 2  # termination protocol only: not enough statuses yet


class AbortCause(enum.IntEnum):
    NONE = 0
    STALE_READ = 1
    WRITE_CONFLICT = 2
    PREPARED_CONFLICT = 3
    GC_HORIZON = 4
    COORDINATOR_FAILURE = 5


class ParticipantStatus(enum.IntEnum):
    RECEIVED_COMMIT = 0
    RECEIVED_ABORT = 1
    PREPARED = 2
    NO_PREPARE_SEEN = 3
    RESPONDED_ABORT = 4


class CommitOutcome(NamedTuple):
    decision: Decision
    cause: AbortCause = AbortCause.NONE
    key: int | None = None  # offending key for StaleRead/conflict aborts


class TxnContext:
    """Mutable per-transaction state held by the coordinating client."""

    __slots__ = (
        "txn_id", "kind", "read_set", "write_set",
        "freshness_ts", "commit_ts",
    )

    def __init__(self, txn_id: int, kind: TxnKind):
        self.txn_id = txn_id
        self.kind = kind
        # read_set: list of (key, version_ts, freshness_ts) in read order
        self.read_set: list[tuple[int, Timestamp, Timestamp]] = []
        # write_set: key -> buffered value, insertion order = write order
        self.write_set: dict[int, bytes] = {}
        self.freshness_ts: Timestamp | None = None
        self.commit_ts: Timestamp | None = None

    def read_keys(self) -> list[int]:
        return [k for k, _, _ in self.read_set]

    def __repr__(self) -> str:
        return (f"TxnContext({self.txn_id:#x}, {self.kind.name}, "
                f"reads={len(self.read_set)}, writes={len(self.write_set)})")


# --- protocol messages ------------------------------------------------------
#
# Every message is a NamedTuple whose first field is its kind tag; the wire
# codec in wire.py maps each kind to a byte layout. src/dst routing lives in
# the simulated network envelope, not here.

class MsgKind(enum.IntEnum):
    GET = 0
    GET_REPLY = 1
    VALIDATE = 2
    VALIDATE_REPLY = 3
    REPLICATE = 4
    REPLICATE_REPLY = 5
    DECISION = 6
    DECISION_ACK = 7
    INVALIDATE = 8
    FRESHNESS_BROADCAST = 9
    WATERMARK_UPDATE = 10
    CTP_QUERY = 11
    CTP_STATUS = 12
    BACKUP_REPLICATE = 13
    BACKUP_ACK = 14


class Get(NamedTuple):
    kind: int
    txn_id: int
    key: int


class GetReply(NamedTuple):
    kind: int
    txn_id: int
    key: int
    value: bytes
    version_ts: Timestamp
    w_mean_us: float  # EWMA of inter-write gaps; < 0 means unknown


class Validate(NamedTuple):
    kind: int
    txn_id: int
    txn_kind: int
    commit_ts: Timestamp
    freshness_ts: Timestamp
    reads: tuple  # ((key, version_ts), ...) filtered to this validator's shard
    write_keys: tuple
    participants: tuple  # all participant validator node ids, sorted


class ValidateReply(NamedTuple):
    kind: int
    txn_id: int
    decision: int
    cause: int
    key: int  # offending key, or -1


class Replicate(NamedTuple):
    kind: int
    txn_id: int
    commit_ts: Timestamp  # lets an orphaned primary fill in a CtpQuery
    writes: tuple  # ((key, value), ...) filtered to this primary's shard
    participants: tuple  # participant validators, for orphan reachback


class ReplicateReply(NamedTuple):
    kind: int
    txn_id: int
    ok: bool


class DecisionMsg(NamedTuple):
    kind: int
    txn_id: int
    decision: int
    commit_ts: Timestamp


class DecisionAck(NamedTuple):
    kind: int
    txn_id: int


class Invalidate(NamedTuple):
    kind: int
    key: int
    version_ts: Timestamp


class FreshnessBroadcast(NamedTuple):
    kind: int
    client: int
    local_watermark: Timestamp
    cache_freshness: Timestamp


class WatermarkUpdate(NamedTuple):
    kind: int
    global_watermark: Timestamp
    gc_ts: Timestamp


class CtpQuery(NamedTuple):
    kind: int
    txn_id: int
    commit_ts: Timestamp
    participants: tuple  # participant validators; lets a cold backup bootstrap


class CtpStatus(NamedTuple):
    kind: int
    txn_id: int
    status: int


class BackupReplicate(NamedTuple):
    kind: int
    txn_id: int
    writes: tuple


class BackupAck(NamedTuple):
    kind: int
    txn_id: int


# Constructors bound to their kind tags so call sites can't mismatch them.
def get(txn_id, key):
    return Get(MsgKind.GET, txn_id, key)


def get_reply(txn_id, key, value, version_ts, w_mean_us):
    return GetReply(MsgKind.GET_REPLY, txn_id, key, value, version_ts, w_mean_us)


def validate(txn_id, txn_kind, commit_ts, freshness_ts, reads, write_keys, participants):
    return Validate(MsgKind.VALIDATE, txn_id, txn_kind, commit_ts, freshness_ts,
                    reads, write_keys, participants)


def validate_reply(txn_id, decision, cause, key):
    return ValidateReply(MsgKind.VALIDATE_REPLY, txn_id, decision, cause, key)


def replicate(txn_id, commit_ts, writes, participants):
    return Replicate(MsgKind.REPLICATE, txn_id, commit_ts, writes, participants)


def replicate_reply(txn_id, ok):
    return ReplicateReply(MsgKind.REPLICATE_REPLY, txn_id, ok)


def decision_msg(txn_id, decision, commit_ts):
    return DecisionMsg(MsgKind.DECISION, txn_id, decision, commit_ts)


def decision_ack(txn_id):
    return DecisionAck(MsgKind.DECISION_ACK, txn_id)


def invalidate(key, version_ts):
    return Invalidate(MsgKind.INVALIDATE, key, version_ts)


def freshness_broadcast(client, local_watermark, cache_freshness):
    return FreshnessBroadcast(MsgKind.FRESHNESS_BROADCAST, client,
                              local_watermark, cache_freshness)


def watermark_update(global_watermark, gc_ts):
    return WatermarkUpdate(MsgKind.WATERMARK_UPDATE, global_watermark, gc_ts)


def ctp_query(txn_id, commit_ts, participants):
    return CtpQuery(MsgKind.CTP_QUERY, txn_id, commit_ts, participants)


def ctp_status(txn_id, status):
    return CtpStatus(MsgKind.CTP_STATUS, txn_id, status)


def backup_replicate(txn_id, writes):
    return BackupReplicate(MsgKind.BACKUP_REPLICATE, txn_id, writes)


def backup_ack(txn_id):
    return BackupAck(MsgKind.BACKUP_ACK, txn_id)
