"""Simulation configuration: one frozen dataclass tree plus override plumbing.

A SimConfig fully determines a run: identical configs (same seed included)
produce identical event traces, metrics, and dumps. Overrides address fields
by dotted path ("workload.alpha_read=1.2") with values coerced to the field's
current type, and a JSON config file may set any subset of fields the same
way.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .cache import LeasePolicy
from .lease import DEFAULT_MAX_LEASE_S
from .workload import WorkloadConfig

STRATEGIES = ("naive", "ei", "lease")

# Node-id layout. Lower ids win backup-coordinator election (min of the
# participant set), so validators must sit below primaries; the layout also
# keeps every range disjoint for the supported cluster sizes.
MASTER_ID = 9
VALIDATOR_BASE = 10
PRIMARY_BASE = 100
BACKUP_BASE = 200
CLIENT_BASE = 900

MAX_SHARDS = 64
MAX_BACKUPS = 9


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    n_clients: int = 10
    n_shards: int = 5
    n_backups: int = 2            # replicas per shard besides the primary
    ack_quorum: int = 1           # backup acks required before the yes-vote
    latency: str = "const:500"    # const:C | uniform:LO:HI | expmin:MIN:MEAN
    skew_us: int = 0              # client clocks spread evenly over [-S, +S]
    strategy: str = "lease"       # naive | ei | lease
    lease_policy: str = "ideal"   # ideal | mean | p:<x>
    cacheable_fraction: float = 0.001
    cache_capacity: int = 4096
    max_lease_s: float = DEFAULT_MAX_LEASE_S
    value_size: int = 16
    report_interval_us: int = 10_000
    ctp_timeout_us: int = 50_000
    txn_timeout_us: int = 1_000_000
    decision_retry_us: int = 20_000
    revive_after_us: int = 100_000
    ro_timetravel: bool = True    # read-only txns validate against history
    service_us: int = 0           # per-message service time at storage primaries
    keep_history: bool = True
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)

    def validated(self) -> "SimConfig":
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not 1 <= self.n_shards <= MAX_SHARDS:
            raise ValueError(f"n_shards must be in [1, {MAX_SHARDS}]")
        if not 0 <= self.n_backups <= MAX_BACKUPS:
            raise ValueError(f"n_backups must be in [0, {MAX_BACKUPS}]")
        if not 0 <= self.ack_quorum <= self.n_backups:
            raise ValueError("ack_quorum must be in [0, n_backups]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        LeasePolicy.parse(self.lease_policy)
        if not 0.0 <= self.cacheable_fraction <= 1.0:
            raise ValueError("cacheable_fraction must be in [0, 1]")
        if self.cache_capacity < 1:
            raise ValueError("cache_capacity must be >= 1")
        if self.skew_us < 0:
            raise ValueError("skew_us is a spread and must be >= 0")
        if self.service_us < 0:
            raise ValueError("service_us must be >= 0")
        # a revived coordinator's watermark report must postdate termination
        # of its orphans, or the GC horizon could pass an undecided commit
        if self.revive_after_us < 2 * self.ctp_timeout_us:
            raise ValueError("revive_after_us must be >= 2 * ctp_timeout_us")
        return self


def _coerce(current, text: str):
    if isinstance(current, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, str):
        return text
    raise ValueError(f"cannot override field of type {type(current).__name__}")


def apply_overrides(cfg: SimConfig, pairs) -> SimConfig:
    """Apply "dotted.path=value" strings; types follow the field overridden."""
    top: dict = {}
    wl: dict = {}
    for pair in pairs:
        path, sep, text = pair.partition("=")
        if not sep:
            raise ValueError(f"override must look like key=value: {pair!r}")
        path = path.strip()
        if path.startswith("workload."):
            name = path[len("workload."):]
            current = getattr(cfg.workload, name, None)
            if current is None:
                raise ValueError(f"unknown workload field {name!r}")
            wl[name] = _coerce(current, text)
        else:
            current = getattr(cfg, path, None)
            if current is None or path == "workload":
                raise ValueError(f"unknown config field {path!r}")
            top[path] = _coerce(current, text)
    if wl:
        top["workload"] = dataclasses.replace(cfg.workload, **wl)
    return dataclasses.replace(cfg, **top).validated()


def config_from_dict(data: dict) -> SimConfig:
    data = dict(data)
    wl = data.pop("workload", {})
    unknown = set(data) - {f.name for f in dataclasses.fields(SimConfig)}
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return SimConfig(workload=WorkloadConfig(**wl), **data).validated()


def config_from_file(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
