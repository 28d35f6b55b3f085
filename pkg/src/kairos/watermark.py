"""Global watermark and GC-horizon tracking.

Every client periodically reports two timestamps: its local watermark, below
which it will never assign another commit timestamp (the minimum in-flight
read-write commit timestamp minus a tick, or its clock when idle), and its
cache freshness, the oldest freshness bound among entries it still holds.
The master folds the latest report from each client:

  global watermark = min of local watermarks
  gc horizon       = min of min(local watermark, cache freshness)

and pushes both to every listener whenever they move. Folding waits until
each client has reported at least once, otherwise a silent client's state
would be invisible to the minimum.

The two inputs have different characters. A local watermark is a promise,
kept across client restarts because the clock behind it is carried over, so
the master asserts it never regresses rather than clamping, to surface
protocol bugs instead of hiding them. Cache freshness is an observation: a
client revived after a crash starts with an empty cache and may legitimately
re-cache an old version before it has seen a watermark broadcast, reporting
freshness below its predecessor's. Since validators may already have pruned
up to the published horizon, the horizon cannot follow such a report back
down; the fold clamps, and any read too old for retained history is aborted
by validation instead.

The global watermark lets clients floor the freshness of cache fills; the GC
horizon lets validators discard version history nothing can read any more.
"""

from __future__ import annotations

from .types import TS_ZERO, MsgKind, Timestamp, ts_before, watermark_update


def local_watermark(in_flight_commit_ts, now: Timestamp) -> Timestamp:
    """A client's promise: no future commit timestamp will fall below this.

    in_flight_commit_ts holds the commit timestamps of read-write txns that
    have been assigned one but are not yet fully decided everywhere. The
    clock being monotone, every future assignment lands above `now`.
    """
    lowest = min(in_flight_commit_ts, default=None)
    if lowest is None:
        return now
    return ts_before(lowest)


class MasterNode:
    """Folds client freshness reports into watermark broadcasts."""

    def __init__(self, env, node_id: int, clients: tuple[int, ...],
                 listeners: tuple[int, ...], load_ts: Timestamp = TS_ZERO):
        self.env = env
        self.node_id = node_id
        self.clients = frozenset(clients)
        self.listeners = listeners
        self.global_watermark = load_ts
        self.gc_ts = load_ts
        self.reports: dict[int, tuple[Timestamp, Timestamp]] = {}
        self._folded = False

    def handle(self, src: int, msg) -> None:
        if msg.kind != MsgKind.FRESHNESS_BROADCAST:
            raise ValueError(f"master got unexpected kind {msg.kind}")
        if msg.client not in self.clients:
            raise ValueError(f"report from unregistered client {msg.client}")
        self.reports[msg.client] = (msg.local_watermark, msg.cache_freshness)
        if len(self.reports) == len(self.clients):
            self._fold()

    def _fold(self) -> None:
        wm = min(lw for lw, _ in self.reports.values())
        assert wm >= self.global_watermark, \
            "watermark fold regressed; a client broke its promise"
        # freshness reports are observations and may regress after a client
        # revival; the horizon already published cannot be taken back
        gc = max(self.gc_ts,
                 min(min(lw, cf) for lw, cf in self.reports.values()))
        if self._folded and (wm, gc) == (self.global_watermark, self.gc_ts):
            return
        self.global_watermark = wm
        self.gc_ts = gc
        self._folded = True
        note = watermark_update(wm, gc)
        for dst in self.listeners:
            self.env.send(dst, note)
