"""Shared test utilities: random micro-history generation."""

import numpy as np

from kairos.checker import HistoryTxn
from kairos.types import TS_ZERO, AbortCause, Decision, Timestamp, TxnKind


def gen_micro_history(rng: np.random.Generator, n_txns=6, n_keys=4,
                      corrupt_prob=0.5):
    """A small committed history, valid by construction, then possibly
    corrupted by flipping one read to a version that was never current or by
    dragging one writer's commit timestamp below an installed version.

    Returns (records, corrupted_flag).
    """
    installed: dict[int, Timestamp] = {}
    history_versions: dict[int, list[Timestamp]] = {k: [TS_ZERO] for k in range(n_keys)}
    recs = []
    t = 0
    for i in range(n_txns):
        t += int(rng.integers(1, 100))
        cts = Timestamp(t, 0, 0)
        kind = TxnKind.READ_WRITE if rng.random() < 0.5 else TxnKind.READ_ONLY
        n = int(rng.integers(1, min(3, n_keys) + 1))
        keys = sorted(int(k) for k in rng.choice(n_keys, size=n, replace=False))
        reads = tuple((k, installed.get(k, TS_ZERO)) for k in keys)
        writes = tuple(keys) if kind == TxnKind.READ_WRITE else ()
        for k in writes:
            installed[k] = cts
            history_versions[k].append(cts)
        recs.append(HistoryTxn(
            txn_id=i + 1, client=1, kind=int(kind),
            decision=int(Decision.COMMIT), cause=int(AbortCause.NONE),
            commit_ts=cts, freshness_ts=TS_ZERO, reads=reads,
            write_keys=writes, start_us=t, decided_us=t))

    corrupted = False
    if rng.random() < corrupt_prob:
        readers = [i for i, r in enumerate(recs) if r.reads]
        if readers:
            i = int(rng.choice(readers))
            rec = recs[i]
            j = int(rng.integers(len(rec.reads)))
            key, vts = rec.reads[j]
            others = [v for v in history_versions[key] if v != vts]
            if others:
                bad = others[int(rng.integers(len(others)))]
                reads = list(rec.reads)
                reads[j] = (key, bad)
                recs[i] = rec._replace(reads=tuple(reads))
                corrupted = True
    return recs, corrupted
