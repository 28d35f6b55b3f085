"""Serializability checking over committed transaction histories.

The system's guarantee is timestamp-order serializability: the execution
must be equivalent to running the committed transactions serially in commit
timestamp order. The primary check replays exactly that order (read-write
before read-only on timestamp ties, since a read-only transaction commits
*at* the version timestamps it read) and verifies that every read returns
the version each key held at that point and that installed versions only
move forward.

An independent, deliberately different oracle searches for *any* serial
order that explains the reads (pure reads-from consistency, no timestamp
constraint). It is exponential and capped at small histories; its purpose is
cross-checking the replay logic, since the replay passing implies a witness
order exists and the search must find one.
"""

from __future__ import annotations

import json
from typing import NamedTuple

from .types import TS_ZERO, Decision, Timestamp, TxnKind


class Violation(NamedTuple):
    txn_id: int
    key: int
    expected: Timestamp
    found: Timestamp
    note: str


def _committed(records):
    return [r for r in records if r.decision == Decision.COMMIT]


def replay_order_key(rec):
    # writers first on ties: a read-only txn commits at the max version
    # timestamp it read, so it must sit after the writer that produced it
    return (rec.commit_ts, 0 if rec.kind == TxnKind.READ_WRITE else 1,
            rec.txn_id)


def check_timestamp_order(records, load_ts: Timestamp = TS_ZERO) -> list[Violation]:
    """Replay committed txns in timestamp order; returns all violations."""
    violations = []
    installed: dict[int, Timestamp] = {}
    for rec in sorted(_committed(records), key=replay_order_key):
        for key, vts in rec.reads:
            current = installed.get(key, load_ts)
            if vts != current:
                violations.append(Violation(
                    rec.txn_id, key, current, vts,
                    "read returned a version other than the latest at its "
                    "commit timestamp"))
        for key in rec.write_keys:
            current = installed.get(key, load_ts)
            if rec.commit_ts <= current:
                violations.append(Violation(
                    rec.txn_id, key, current, rec.commit_ts,
                    "installed version did not advance"))
            installed[key] = rec.commit_ts
    return violations


MAX_BRUTE_FORCE = 8


def brute_force_serializable(records, load_ts: Timestamp = TS_ZERO) -> bool:
    """Is there any serial order under which every read sees the version the
    latest preceding writer installed? Exponential; small histories only."""
    txns = _committed(records)
    if len(txns) > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force capped at {MAX_BRUTE_FORCE} txns")

    def reads_ok(rec, installed):
        return all(installed.get(key, load_ts) == vts for key, vts in rec.reads)

    seen = set()

    def search(remaining, installed):
        if not remaining:
            return True
        state = (remaining, tuple(sorted(installed.items())))
        if state in seen:
            return False
        seen.add(state)
        for i in remaining:
            rec = txns[i]
            if not reads_ok(rec, installed):
                continue
            nxt = dict(installed)
            for key in rec.write_keys:
                nxt[key] = rec.commit_ts
            if search(remaining - {i}, nxt):
                return True
        return False

    return search(frozenset(range(len(txns))), {})


# -- history files -----------------------------------------------------------

def _ts_json(ts: Timestamp) -> list:
    return [ts.micros, ts.node, ts.seq]


def record_to_json(rec) -> str:
    return json.dumps({
        "txn_id": rec.txn_id,
        "client": rec.client,
        "kind": int(rec.kind),
        "decision": int(rec.decision),
        "cause": int(rec.cause),
        "commit_ts": _ts_json(rec.commit_ts),
        "freshness_ts": _ts_json(rec.freshness_ts),
        "reads": [[k, _ts_json(v)] for k, v in rec.reads],
        "write_keys": list(rec.write_keys),
        "start_us": rec.start_us,
        "decided_us": rec.decided_us,
    }, separators=(",", ":"), sort_keys=True)


class HistoryTxn(NamedTuple):
    txn_id: int
    client: int
    kind: int
    decision: int
    cause: int
    commit_ts: Timestamp
    freshness_ts: Timestamp
    reads: tuple
    write_keys: tuple
    start_us: int
    decided_us: int


def record_from_json(line: str) -> HistoryTxn:
    d = json.loads(line)
    return HistoryTxn(
        d["txn_id"], d["client"], d["kind"], d["decision"], d["cause"],
        Timestamp(*d["commit_ts"]), Timestamp(*d["freshness_ts"]),
        tuple((k, Timestamp(*v)) for k, v in d["reads"]),
        tuple(d["write_keys"]), d["start_us"], d["decided_us"])


def load_history(path) -> list[HistoryTxn]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_from_json(line))
    return out
