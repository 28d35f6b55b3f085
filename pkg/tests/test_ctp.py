"""Cooperative termination: decision rules and backup-coordinator flow."""

import itertools

import pytest

from kairos.storage import StorageNode
from kairos.types import (
    Decision, MsgKind, ParticipantStatus, Timestamp, TxnKind,
    ctp_query, decision_msg, replicate, validate,
)
from kairos.validator import ValidatorNode, ctp_decide

P = ParticipantStatus


class TestCtpDecide:
    @pytest.mark.parametrize("statuses,expected", [
        ([P.RECEIVED_COMMIT], Decision.COMMIT),
        ([P.RECEIVED_ABORT], Decision.ABORT),
        ([P.PREPARED, P.RECEIVED_COMMIT, P.PREPARED], Decision.COMMIT),
        ([P.PREPARED, P.RECEIVED_ABORT], Decision.ABORT),
        ([P.PREPARED, P.NO_PREPARE_SEEN], Decision.ABORT),
        ([P.PREPARED, P.RESPONDED_ABORT], Decision.ABORT),
        ([P.PREPARED, P.PREPARED, P.PREPARED], Decision.COMMIT),
        ([P.PREPARED], Decision.COMMIT),
        ([], Decision.PENDING),
        # a received decision outranks everything else
        ([P.RECEIVED_COMMIT, P.NO_PREPARE_SEEN], Decision.COMMIT),
        ([P.RECEIVED_COMMIT, P.RESPONDED_ABORT], Decision.COMMIT),
    ])
    def test_rules(self, statuses, expected):
        assert ctp_decide(statuses) == expected

    def test_order_independent(self):
        for perm in itertools.permutations(
                [P.PREPARED, P.NO_PREPARE_SEEN, P.RECEIVED_COMMIT]):
            assert ctp_decide(perm) == Decision.COMMIT


class Pump:
    """Delivers messages between registered nodes in send order."""

    def __init__(self):
        self.nodes = {}
        self.queue = []
        self.timers = []
        self.dropped = set()  # crashed node ids

    def env_for(self, node_id):
        pump = self

        class Env:
            @staticmethod
            def send(dst, msg):
                pump.queue.append((node_id, dst, msg))

            @staticmethod
            def after(delay_us, fn, *args):
                pump.timers.append((fn, args))

        return Env()

    def add(self, node):
        self.nodes[node.node_id] = node

    def run(self):
        while self.queue:
            src, dst, msg = self.queue.pop(0)
            if dst in self.dropped or dst not in self.nodes:
                continue
            self.nodes[dst].handle(src, msg)

    def fire_timers(self):
        timers, self.timers = self.timers, []
        for fn, args in timers:
            fn(*args)
        self.run()


def ts(us):
    return Timestamp(us, 0, 0)


CLIENT = 900


def make_cluster(n=3):
    pump = Pump()
    nodes = []
    for nid in (10, 11, 12)[:n]:
        node = ValidatorNode(pump.env_for(nid), nid)
        pump.add(node)
        nodes.append(node)
    return pump, nodes


def send_validates(pump, nodes, txn_id=1, cts=None, skip=()):
    cts = cts or ts(100)
    parts = tuple(n.node_id for n in nodes)
    for node in nodes:
        if node.node_id in skip:
            continue
        key = node.node_id * 1000  # disjoint keys per shard
        pump.queue.append((CLIENT, node.node_id,
                           validate(txn_id, TxnKind.READ_WRITE, cts, cts,
                                    (), (key,), parts)))
    pump.run()
    return cts, parts


class TestValidatorNodeBasics:
    def test_validate_replies_and_arms_watchdog(self):
        pump, nodes = make_cluster(1)
        send_validates(pump, nodes)
        # reply went back to the client; drop it from inspection
        assert pump.timers, "prepared txn should arm a termination watchdog"

    def test_decision_disarms_watchdog(self):
        pump, nodes = make_cluster(1)
        cts, _ = send_validates(pump, nodes)
        pump.queue.append((CLIENT, 10, decision_msg(1, Decision.COMMIT, cts)))
        pump.run()
        pump.fire_timers()
        assert all(n.core.decided.get(1) == Decision.COMMIT for n in nodes)
        # watchdog found the txn decided: no queries in flight, no new timers
        assert pump.timers == []


class TestOrphanResolution:
    def test_all_prepared_resolves_commit(self):
        pump, nodes = make_cluster(3)
        cts, _ = send_validates(pump, nodes)
        pump.fire_timers()  # coordinator never decides: watchdogs fire
        for n in nodes:
            assert n.core.decided.get(1) == Decision.COMMIT, n.node_id
            assert 1 not in n.core.prepared

    def test_missing_prepare_resolves_abort(self):
        pump, nodes = make_cluster(3)
        # coordinator crashed before reaching node 12
        cts, _ = send_validates(pump, nodes, skip=(12,))
        pump.fire_timers()
        for n in nodes:
            assert n.core.decided.get(1) == Decision.ABORT, n.node_id
            assert 1 not in n.core.prepared

    def test_voted_abort_resolves_abort(self):
        pump, nodes = make_cluster(3)
        # node 12 already installed a newer version: it votes no
        nodes[2].core.validate(99, TxnKind.READ_WRITE, ts(500), ts(500),
                               (), (12000,))
        nodes[2].core.apply_decision(99, Decision.COMMIT, ts(500))
        send_validates(pump, nodes, cts=ts(400))
        pump.fire_timers()
        for n in nodes:
            assert n.core.decided.get(1) == Decision.ABORT, n.node_id

    def test_partial_decision_propagates_commit(self):
        pump, nodes = make_cluster(3)
        cts, _ = send_validates(pump, nodes)
        # coordinator decided commit, told only node 11, then crashed
        pump.queue.append((CLIENT, 11, decision_msg(1, Decision.COMMIT, cts)))
        pump.run()
        pump.fire_timers()
        for n in nodes:
            assert n.core.decided.get(1) == Decision.COMMIT, n.node_id

    def test_storage_querier_receives_decision(self):
        pump, nodes = make_cluster(3)
        cts, parts = send_validates(pump, nodes)
        storage_inbox = []

        class StorageStub:
            node_id = 500

            def handle(self, src, msg):
                storage_inbox.append((src, msg))

        pump.add(StorageStub())
        pump.queue.append((500, 10, ctp_query(1, cts, parts)))
        pump.run()
        pump.fire_timers()
        decisions = [m for _, m in storage_inbox if m.kind == MsgKind.DECISION]
        assert len(decisions) >= 1
        assert decisions[0].decision == Decision.COMMIT

    def test_query_on_already_decided_txn_answered_directly(self):
        pump, nodes = make_cluster(3)
        cts, parts = send_validates(pump, nodes)
        for n in nodes:
            pump.queue.append((CLIENT, n.node_id,
                               decision_msg(1, Decision.ABORT, cts)))
        pump.run()
        inbox = []

        class StorageStub:
            node_id = 500

            def handle(self, src, msg):
                inbox.append(msg)

        pump.add(StorageStub())
        pump.queue.append((500, 10, ctp_query(1, cts, parts)))
        pump.run()
        assert [m.decision for m in inbox if m.kind == MsgKind.DECISION] \
            == [Decision.ABORT]

    def test_status_request_answered_by_non_backup(self):
        pump, nodes = make_cluster(2)
        cts, parts = send_validates(pump, nodes)
        inbox = []

        class BackupStub:  # poses as node 10, the backup coordinator
            node_id = 10

            def handle(self, src, msg):
                inbox.append((src, msg))

        pump.nodes[10] = BackupStub()
        pump.queue.append((10, 11, ctp_query(1, cts, parts)))
        pump.run()
        statuses = [m for _, m in inbox if m.kind == MsgKind.CTP_STATUS]
        assert len(statuses) == 1
        assert statuses[0].status == ParticipantStatus.PREPARED

    def test_resolution_is_idempotent_under_repeated_nudges(self):
        pump, nodes = make_cluster(3)
        cts, parts = send_validates(pump, nodes)
        pump.fire_timers()
        first = {n.node_id: n.core.decided[1] for n in nodes}
        pump.queue.append((500, 10, ctp_query(1, cts, parts)))
        pump.run()
        pump.fire_timers()
        assert {n.node_id: n.core.decided[1] for n in nodes} == first


class TestStorageParticipants:
    """Primaries are polled too: a write that never arrived vetoes commit."""

    def make_mixed_cluster(self):
        pump, validators = make_cluster(2)
        primary = StorageNode(pump.env_for(100), 100, backups=(), ack_quorum=0)
        pump.add(primary)
        return pump, validators, primary

    def prepare_validators(self, pump, validators, parts, cts):
        for node in validators:
            pump.queue.append((CLIENT, node.node_id,
                               validate(1, TxnKind.READ_WRITE, cts, cts,
                                        (), (node.node_id * 1000,), parts)))
        pump.run()

    def test_missing_replicate_resolves_abort(self):
        pump, validators, primary = self.make_mixed_cluster()
        cts, parts = ts(100), (10, 11, 100)
        # coordinator crashed after the validates, before the replicate
        self.prepare_validators(pump, validators, parts, cts)
        pump.fire_timers()
        for n in validators:
            assert n.core.decided.get(1) == Decision.ABORT, n.node_id
        assert primary.decided.get(1) == Decision.ABORT
        assert primary.kv == {}

    def test_replicated_write_resolves_commit_and_installs(self):
        pump, validators, primary = self.make_mixed_cluster()
        cts, parts = ts(100), (10, 11, 100)
        self.prepare_validators(pump, validators, parts, cts)
        pump.queue.append((CLIENT, 100, replicate(1, cts, ((7, b"v"),), parts)))
        pump.run()
        pump.fire_timers()
        for n in validators:
            assert n.core.decided.get(1) == Decision.COMMIT, n.node_id
        assert primary.decided.get(1) == Decision.COMMIT
        assert primary.kv[7] == (b"v", cts)

    def test_read_only_shard_validator_reports_prepared(self):
        # a participant that validated only reads must still answer PREPARED,
        # otherwise the termination rules would abort a committable txn
        pump, nodes = make_cluster(1)
        pump.queue.append((CLIENT, 10,
                           validate(1, TxnKind.READ_WRITE, ts(100), ts(100),
                                    ((10_000, Timestamp(0, 0, 0)),), (), (10, 11))))
        pump.run()
        assert nodes[0].core.ctp_status(1) == ParticipantStatus.PREPARED
        # and the decision clears that record
        pump.queue.append((CLIENT, 10, decision_msg(1, Decision.COMMIT, ts(100))))
        pump.run()
        assert 1 not in nodes[0].core.prepared
        assert nodes[0].core.decided[1] == Decision.COMMIT
