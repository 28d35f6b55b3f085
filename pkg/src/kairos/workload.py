"""Open-loop transactional workload with split zipf skew.

Each client draws transactions with exponential inter-arrival gaps. A draw is
read-only with probability read_only_ratio; read-only txns pick key ranks from
a zipf(alpha_read) distribution and read-write txns from zipf(alpha_rw), each
txn touching keys_per_txn distinct keys (read-write txns read then update every
key). Ranks map to key ids through a seeded permutation so popularity is
decoupled from key numbering and spreads across shards.

Zipf sampling is exact: inverse transform over the precomputed rank CDF with
binary search. Streams pre-generate draws in blocks for speed; consumption
order is fixed, so a stream is fully determined by its seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .types import TxnKind

_BLOCK = 4096


@dataclass(frozen=True)
class WorkloadConfig:
    n_keys: int = 100_000
    keys_per_txn: int = 4
    read_only_ratio: float = 0.9
    alpha_read: float = 0.99
    alpha_rw: float = 0.5
    rate_per_client_tps: float = 1000.0

    def __post_init__(self):
        if self.n_keys < 1:
            raise ValueError("n_keys must be >= 1")
        if not 0 < self.keys_per_txn <= self.n_keys:
            raise ValueError("keys_per_txn must be in [1, n_keys]")
        if not 0.0 <= self.read_only_ratio <= 1.0:
            raise ValueError("read_only_ratio must be in [0, 1]")
        if self.rate_per_client_tps <= 0:
            raise ValueError("rate_per_client_tps must be positive")


class TxnSpec(NamedTuple):
    gap_us: int  # exponential gap since the previous arrival at this client
    kind: TxnKind
    keys: tuple


def zipf_cdf(n_keys: int, alpha: float) -> np.ndarray:
    """CDF over ranks 1..n of p(rank) proportional to rank^-alpha."""
    weights = np.arange(1, n_keys + 1, dtype=np.float64) ** -alpha
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def zipf_top_share(n_keys: int, alpha: float, top: int) -> float:
    """Analytic probability mass of the top ranks (chunked, no big allocs)."""
    total = 0.0
    head = 0.0
    step = 2_000_000
    for lo in range(1, n_keys + 1, step):
        hi = min(n_keys + 1, lo + step)
        w = np.arange(lo, hi, dtype=np.float64) ** -alpha
        total += float(w.sum())
        if lo <= top:
            head += float(w[: max(0, min(top, hi - 1) - lo + 1)].sum())
    return head / total


def key_permutation(n_keys: int, seed: int) -> np.ndarray:
    """Rank -> key id mapping shared by every client of one simulation."""
    return np.random.default_rng(np.random.SeedSequence([seed, 0xA11])).permutation(n_keys)


class WorkloadStream:
    """Deterministic per-client arrival stream."""

    def __init__(self, cfg: WorkloadConfig, seed_seq, perm: np.ndarray,
                 cdf_read: np.ndarray, cdf_rw: np.ndarray):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed_seq)
        self.perm = perm
        self.cdf_read = cdf_read
        self.cdf_rw = cdf_rw
        self.mean_gap_us = 1e6 / cfg.rate_per_client_tps
        self._gaps: np.ndarray = np.empty(0, dtype=np.int64)
        self._kinds: np.ndarray = np.empty(0, dtype=np.bool_)
        self._gi = 0
        self._ranks = {True: np.empty(0, dtype=np.int64),
                       False: np.empty(0, dtype=np.int64)}
        self._ri = {True: 0, False: 0}

    def _refill_arrivals(self):
        self._gaps = self.rng.exponential(self.mean_gap_us, _BLOCK).astype(np.int64)
        self._kinds = self.rng.random(_BLOCK) < self.cfg.read_only_ratio
        self._gi = 0

    def _refill_ranks(self, read_only: bool):
        cdf = self.cdf_read if read_only else self.cdf_rw
        u = self.rng.random(_BLOCK)
        self._ranks[read_only] = np.searchsorted(cdf, u, side="right")
        self._ri[read_only] = 0

    def _next_rank(self, read_only: bool) -> int:
        i = self._ri[read_only]
        buf = self._ranks[read_only]
        if i >= len(buf):
            self._refill_ranks(read_only)
            i = 0
            buf = self._ranks[read_only]
        self._ri[read_only] = i + 1
        return int(buf[i])

    def next_txn(self) -> TxnSpec:
        if self._gi >= len(self._gaps):
            self._refill_arrivals()
        gap = int(self._gaps[self._gi])
        read_only = bool(self._kinds[self._gi])
        self._gi += 1
        want = self.cfg.keys_per_txn
        ranks: list[int] = []
        while len(ranks) < want:
            r = self._next_rank(read_only)
            if r not in ranks:  # keys drawn without replacement
                ranks.append(r)
        keys = tuple(int(self.perm[r]) for r in ranks)
        return TxnSpec(gap, TxnKind.READ_ONLY if read_only else TxnKind.READ_WRITE, keys)


def build_streams(cfg: WorkloadConfig, n_clients: int, seed: int) -> list[WorkloadStream]:
    """One independent stream per client, all from one master seed."""
    perm = key_permutation(cfg.n_keys, seed)
    cdf_read = zipf_cdf(cfg.n_keys, cfg.alpha_read)
    cdf_rw = zipf_cdf(cfg.n_keys, cfg.alpha_rw)
    seqs = np.random.SeedSequence([seed, 0x5EED]).spawn(n_clients)
    return [WorkloadStream(cfg, s, perm, cdf_read, cdf_rw) for s in seqs]


def cacheable_keys(cfg: WorkloadConfig, seed: int, fraction: float) -> frozenset:
    """Hottest ranks by share `fraction`, mapped to key ids."""
    n = max(1, int(cfg.n_keys * fraction))
    perm = key_permutation(cfg.n_keys, seed)
    return frozenset(int(k) for k in perm[:n])
