"""Deterministic discrete-event simulation of the full cluster.

Virtual time is integer microseconds. One priority queue holds every pending
event as a (time, seq) pair, seq assigned at insertion, so the processing
order is total and reproducible: identical configs replay identical traces.
Message latency is sampled per send from the configured model; non-constant
models additionally clamp each (src, dst) link to in-order delivery, matching
a stream transport. An optional per-message service time at validators and
primaries serializes their inboxes, so bursts (invalidation storms, hot-shard
fan-in) build real queuing delay instead of being absorbed instantly.

Crashes are modeled lazily: a crashed node's inbound messages are dropped at
delivery time and its timers are invalidated by an epoch counter bumped on
every crash, so callbacks of dead incarnations never fire. Reviving a client
installs a fresh node object (fresh cache, next incarnation id) behind the
same node id; the workload stream and the monotone local clock carry over.

The Sim facade wires the nodes from a SimConfig: one validator and one
primary per shard, n_backups passive replicas behind each primary, n_clients
coordinators driving independent workload streams, and a watermark master.
"""

from __future__ import annotations

import heapq

import numpy as np

from .cache import CacheStrategy, ClientCache, LeasePolicy
from .client import ClientNode
from .clock import SkewedClock
from .config import (
    BACKUP_BASE, CLIENT_BASE, MASTER_ID, PRIMARY_BASE, VALIDATOR_BASE,
    SimConfig,
)
from .metrics import Recorder
from .storage import BackupNode, StorageNode
from .types import Decision
from .validator import Validator, ValidatorNode
from .watermark import MasterNode
from .workload import build_streams, cacheable_keys

_BLOCK = 4096
_FOREVER_US = 1 << 62


class _Buffered:
    """Block-buffered integer draws from one numpy generator."""

    __slots__ = ("_draw", "_buf", "_i")

    def __init__(self, draw):
        self._draw = draw
        self._buf = ()
        self._i = 0

    def __call__(self) -> int:
        i = self._i
        buf = self._buf
        if i >= len(buf):
            buf = self._buf = self._draw(_BLOCK)
            i = 0
        self._i = i + 1
        return int(buf[i])


def parse_latency(spec: str, rng):
    """One-way delay sampler from its config string.

    Returns (sample, is_constant); is_constant lets the loop skip per-link
    FIFO bookkeeping, since a fixed delay cannot reorder a link.
    """
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "const" and len(parts) == 2:
            c = int(parts[1])
            if c < 0:
                raise ValueError
            return (lambda: c), True
        if kind == "uniform" and len(parts) == 3:
            lo, hi = int(parts[1]), int(parts[2])
            if not 0 <= lo <= hi:
                raise ValueError
            return _Buffered(lambda n: rng.integers(lo, hi + 1, n)), lo == hi
        if kind == "expmin" and len(parts) == 3:
            mn, mean = int(parts[1]), int(parts[2])
            if not 0 <= mn < mean:
                raise ValueError
            scale = mean - mn
            return _Buffered(
                lambda n: mn + rng.exponential(scale, n).astype(np.int64)), False
    except ValueError:
        pass
    raise ValueError(f"bad latency spec {spec!r} "
                     "(const:C | uniform:LO:HI | expmin:MIN:MEAN)")


class Env:
    """One node's window onto the loop."""

    __slots__ = ("_loop", "_send", "node_id")

    def __init__(self, loop: "EventLoop", node_id: int):
        self._loop = loop
        self._send = loop.send
        self.node_id = node_id

    def send(self, dst: int, msg) -> None:
        self._send(self.node_id, dst, msg)

    def after(self, delay_us: int, fn, *args) -> None:
        self._loop.after(self.node_id, delay_us, fn, args)

    def true_now(self) -> int:
        return self._loop.now_us

    def crash_self(self) -> None:
        self._loop.crash(self.node_id)


class EventLoop:
    def __init__(self, latency=None, *, fifo_links: bool = False):
        self.now_us = 0
        self.nodes: dict[int, object] = {}
        self.crashed: set[int] = set()
        self.dropped = 0
        self.service_us: dict[int, int] = {}
        self.on_crash = None
        self._heap: list = []
        self._seq = 0
        self._latency = latency if latency is not None else (lambda: 0)
        self._links: dict | None = {} if fifo_links else None
        self._epochs: dict[int, int] = {}
        self._busy: dict[int, int] = {}
        self._stop = False

    def env(self, node_id: int) -> Env:
        return Env(self, node_id)

    def add(self, node_id: int, node) -> None:
        self.nodes[node_id] = node

    # -- scheduling -------------------------------------------------------

    def send(self, src: int, dst: int, msg) -> None:
        self._seq += 1
        t = self.now_us + self._latency()
        links = self._links
        if links is not None:
            k = (src, dst)
            last = links.get(k, 0)
            if t < last:
                t = last
            links[k] = t
        heapq.heappush(self._heap, (t, self._seq, 0, dst, src, msg))

    def after(self, node_id: int, delay_us: int, fn, args=()) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (self.now_us + delay_us, self._seq, 1,
                                    node_id, self._epochs.get(node_id, 0),
                                    fn, args))

    def after_system(self, delay_us: int, fn, args=()) -> None:
        """A timer owned by the harness itself: survives any node crash."""
        self._seq += 1
        heapq.heappush(self._heap, (self.now_us + delay_us, self._seq, 1,
                                    None, 0, fn, args))

    # -- crash / revival -----------------------------------------------------

    def crash(self, node_id: int) -> None:
        self.crashed.add(node_id)
        # invalidate the dead incarnation's timers
        self._epochs[node_id] = self._epochs.get(node_id, 0) + 1
        if self.on_crash is not None:
            self.on_crash(node_id)

    def revive(self, node_id: int, node) -> None:
        self.crashed.discard(node_id)
        self.nodes[node_id] = node

    # -- the loop ----------------------------------------------------------

    def stop(self) -> None:
        self._stop = True

    def run(self, max_us: int = _FOREVER_US) -> None:
        self._stop = False
        heap = self._heap
        nodes = self.nodes
        crashed = self.crashed
        epochs = self._epochs
        service = self.service_us
        busy = self._busy
        has_service = bool(service)
        pop = heapq.heappop
        push = heapq.heappush
        while heap and not self._stop:
            ev = heap[0]
            t = ev[0]
            if t > max_us:
                self.now_us = max_us
                return
            pop(heap)
            self.now_us = t
            if ev[2]:  # timer: (t, seq, 1, node, epoch, fn, args)
                node_id = ev[3]
                if node_id is not None and ev[4] != epochs.get(node_id, 0):
                    continue
                ev[5](*ev[6])
            else:      # message: (t, seq, 0, dst, src, msg)
                dst = ev[3]
                if dst in crashed:
                    self.dropped += 1
                    continue
                if has_service:
                    su = service.get(dst)
                    if su:
                        b = busy.get(dst, 0)
                        if b > t:
                            # inbox busy: requeue behind current work. Pops
                            # happen in arrival order, so FIFO is preserved.
                            self._seq += 1
                            push(heap, (b, self._seq, 0, dst, ev[4], ev[5]))
                            continue
                        busy[dst] = t + su
                nodes[dst].handle(ev[4], ev[5])


def client_skews(n: int, spread_us: int) -> list[int]:
    """Fixed clock offsets spread evenly over [-spread, +spread]."""
    if n == 1 or spread_us == 0:
        return [0] * n
    return [round(-spread_us + 2 * spread_us * i / (n - 1)) for i in range(n)]


_STRATEGY = {"naive": CacheStrategy.NAIVE, "ei": CacheStrategy.EI,
             "lease": CacheStrategy.LEASE}


class Sim:
    """A fully wired cluster plus its recorder.

    crash_plan, when given, is forwarded to every client: a callable
    (txn_id, n_boundaries) -> boundary index or None deciding whether (and
    where in the commit protocol) the coordinator kills itself. Crashed
    clients are revived revive_after_us later as a fresh incarnation.
    """

    def __init__(self, cfg: SimConfig, *, crash_plan=None):
        cfg.validated()
        self.cfg = cfg
        self.recorder = Recorder()
        self.recorder.keep_history = cfg.keep_history
        self._crash_plan = crash_plan

        lat_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0x1A7E]))
        latency, constant = parse_latency(cfg.latency, lat_rng)
        self.loop = EventLoop(latency, fifo_links=not constant)
        self.recorder.bind_clock(lambda: self.loop.now_us)

        self.validator_ids = tuple(VALIDATOR_BASE + s
                                   for s in range(cfg.n_shards))
        self.primary_ids = tuple(PRIMARY_BASE + s for s in range(cfg.n_shards))
        self.client_ids = tuple(CLIENT_BASE + i for i in range(cfg.n_clients))

        self._strategy = _STRATEGY[cfg.strategy]
        self._policy = LeasePolicy.parse(cfg.lease_policy)
        self._cacheable = cacheable_keys(cfg.workload, cfg.seed,
                                         cfg.cacheable_fraction)
        self._streams = build_streams(cfg.workload, cfg.n_clients, cfg.seed)
        self._skews = client_skews(cfg.n_clients, cfg.skew_us)
        self._clocks = [SkewedClock(cid, skew)
                        for cid, skew in zip(self.client_ids, self._skews)]
        self._incarnations = [0] * cfg.n_clients
        self._quiesced = False

        self.validators = []
        for vid in self.validator_ids:
            core = Validator(timetravel_ro=cfg.ro_timetravel)
            node = ValidatorNode(self.loop.env(vid), vid, core,
                                 ctp_timeout_us=cfg.ctp_timeout_us)
            self.loop.add(vid, node)
            self.validators.append(node)

        track = self._strategy == CacheStrategy.EI
        self.primaries = []
        self.backups = []
        for s, pid in enumerate(self.primary_ids):
            backup_ids = tuple(BACKUP_BASE + s * 10 + j
                               for j in range(cfg.n_backups))
            node = StorageNode(self.loop.env(pid), pid, backup_ids,
                               cfg.ack_quorum, track_sharers=track,
                               cacheable=self._cacheable if track else None,
                               ctp_timeout_us=cfg.ctp_timeout_us,
                               recorder=self.recorder)
            self.loop.add(pid, node)
            self.primaries.append(node)
            for bid in backup_ids:
                b = BackupNode(self.loop.env(bid), bid, primary=pid)
                self.loop.add(bid, b)
                self.backups.append(b)

        self.master = MasterNode(self.loop.env(MASTER_ID), MASTER_ID,
                                 clients=self.client_ids,
                                 listeners=self.client_ids + self.validator_ids)
        self.loop.add(MASTER_ID, self.master)

        if cfg.service_us:
            # storage primaries are the capacity-constrained resource; cache
            # hits relieve exactly this queue, validators stay instant
            for nid in self.primary_ids:
                self.loop.service_us[nid] = cfg.service_us

        self.clients = [self._spawn_client(i, 0)
                        for i in range(cfg.n_clients)]
        for cid, c in zip(self.client_ids, self.clients):
            self.loop.add(cid, c)
        if crash_plan is not None:
            self.loop.on_crash = self._schedule_revival

    def _spawn_client(self, i: int, incarnation: int) -> ClientNode:
        cfg = self.cfg
        cid = self.client_ids[i]
        cache = ClientCache(self._strategy, cfg.cache_capacity,
                            self._cacheable, self._policy,
                            max_lease_s=cfg.max_lease_s)
        cache.observer = self.recorder.cache_observer(cid, self._skews[i])
        return ClientNode(
            self.loop.env(cid), cid, clock=self._clocks[i],
            stream=self._streams[i], cache=cache, n_shards=cfg.n_shards,
            validators=self.validator_ids, primaries=self.primary_ids,
            master=MASTER_ID, recorder=self.recorder,
            value_size=cfg.value_size,
            report_interval_us=cfg.report_interval_us,
            txn_timeout_us=cfg.txn_timeout_us,
            decision_retry_us=cfg.decision_retry_us,
            crash_plan=self._crash_plan, incarnation=incarnation)

    def _schedule_revival(self, node_id: int) -> None:
        self.loop.after_system(self.cfg.revive_after_us,
                               self._revive, (node_id,))

    def _revive(self, node_id: int) -> None:
        i = node_id - CLIENT_BASE
        self._incarnations[i] += 1
        client = self._spawn_client(i, self._incarnations[i])
        self.clients[i] = client
        if self._quiesced:
            client.quiesce()
        self.loop.revive(node_id, client)
        client.start()

    # -- driving -----------------------------------------------------------

    def run(self, *, max_us: int = _FOREVER_US, until_committed=None,
            until_decided=None, drain_us: int = 0) -> Recorder:
        """Drive the loop until a target or the time budget, then finalize.

        until_committed / until_decided stop the run once the recorder has
        seen that many commits / decisions. drain_us then quiesces every
        client (no new transactions, revivals included) and keeps the loop
        running that much longer so in-flight 2PC rounds and
        termination-protocol resolutions settle before auditing.
        """
        rec = self.recorder
        if until_committed is not None:
            rec.target_commits = until_committed
        if until_decided is not None:
            rec.target_decided = until_decided
        if until_committed is not None or until_decided is not None:
            rec.on_target = self.loop.stop
        for c in self.clients:
            c.start()
        self.loop.run(max_us)
        if drain_us:
            rec.on_target = None
            self._quiesced = True
            for c in self.clients:
                c.quiesce()
            self.loop.run(min(max_us, self.loop.now_us + drain_us))
        rec.finalize(self.loop.now_us)
        return rec

    # -- post-run auditing -------------------------------------------------

    def participant_decisions(self, txn_id: int) -> dict[int, Decision]:
        """Decision as recorded at every node that holds one for the txn."""
        out: dict[int, Decision] = {}
        for v in self.validators:
            d = v.core.decided.get(txn_id)
            if d is not None:
                out[v.node_id] = d
        for p in self.primaries:
            d = p.decided.get(txn_id)
            if d is not None:
                out[p.node_id] = Decision(d)
        return out

    def undecided_holders(self, txn_id: int) -> list[int]:
        """Nodes still holding prepared/pending state for the txn."""
        stuck = [v.node_id for v in self.validators
                 if txn_id in v.core.prepared]
        stuck += [p.node_id for p in self.primaries if txn_id in p.pending]
        return stuck
