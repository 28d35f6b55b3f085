"""Workload generator: zipf exactness, arrival rates, determinism."""

import numpy as np
import pytest

from kairos.types import TxnKind
from kairos.workload import (
    WorkloadConfig, build_streams, cacheable_keys, key_permutation,
    zipf_cdf, zipf_top_share,
)


def drain(stream, n):
    return [stream.next_txn() for _ in range(n)]


def test_stream_deterministic():
    cfg = WorkloadConfig(n_keys=1000, rate_per_client_tps=500)
    a = drain(build_streams(cfg, 2, seed=9)[0], 500)
    b = drain(build_streams(cfg, 2, seed=9)[0], 500)
    assert a == b
    c = drain(build_streams(cfg, 2, seed=10)[0], 500)
    assert a != c


def test_clients_independent_but_seeded():
    cfg = WorkloadConfig(n_keys=1000)
    s0, s1 = build_streams(cfg, 2, seed=9)
    assert drain(s0, 200) != drain(s1, 200)


def test_keys_distinct_within_txn():
    cfg = WorkloadConfig(n_keys=16, keys_per_txn=4)  # tiny space forces redraws
    stream = build_streams(cfg, 1, seed=3)[0]
    for spec in drain(stream, 2000):
        assert len(set(spec.keys)) == len(spec.keys) == 4
        assert all(0 <= k < 16 for k in spec.keys)


def test_read_only_ratio():
    cfg = WorkloadConfig(n_keys=1000, read_only_ratio=0.9)
    stream = build_streams(cfg, 1, seed=4)[0]
    specs = drain(stream, 20_000)
    ro = sum(1 for s in specs if s.kind == TxnKind.READ_ONLY)
    assert ro / len(specs) == pytest.approx(0.9, abs=0.01)


def test_open_loop_rate_within_one_percent():
    cfg = WorkloadConfig(n_keys=100, rate_per_client_tps=2000.0)
    stream = build_streams(cfg, 1, seed=5)[0]
    gaps = [stream.next_txn().gap_us for _ in range(400_000)]
    assert np.mean(gaps) == pytest.approx(500.0, rel=0.01)


def test_zipf_rank1_mass_matches_analytic():
    cfg = WorkloadConfig(n_keys=1000, alpha_read=0.99, keys_per_txn=1,
                         read_only_ratio=1.0)
    perm = key_permutation(1000, seed=6)
    hottest = int(perm[0])
    stream = build_streams(cfg, 1, seed=6)[0]
    n = 200_000
    hits = sum(1 for s in drain(stream, n) if s.keys[0] == hottest)
    want = zipf_top_share(1000, 0.99, 1)
    assert hits / n == pytest.approx(want, rel=0.02)


def test_zipf_top_percent_share():
    # alpha .99 concentrates ~60% of draws on the top 1% of 100k ranks; the
    # empirical share must match the analytic mass within 2%.
    n_keys = 100_000
    cfg = WorkloadConfig(n_keys=n_keys, alpha_read=0.99, keys_per_txn=1,
                         read_only_ratio=1.0)
    hot = cacheable_keys(cfg, seed=7, fraction=0.01)
    assert len(hot) == 1000
    stream = build_streams(cfg, 1, seed=7)[0]
    n = 200_000
    hits = sum(1 for s in drain(stream, n) if s.keys[0] in hot)
    want = zipf_top_share(n_keys, 0.99, 1000)
    assert 0.55 < want < 0.65
    assert hits / n == pytest.approx(want, rel=0.02)


def test_zipf_alpha_zero_is_uniform():
    cdf = zipf_cdf(50, 0.0)
    steps = np.diff(cdf, prepend=0.0)
    assert np.allclose(steps, 1 / 50)


def test_zipf_single_key():
    cfg = WorkloadConfig(n_keys=1, keys_per_txn=1)
    stream = build_streams(cfg, 1, seed=8)[0]
    assert all(s.keys == (0,) for s in drain(stream, 50))


def test_skew_shift_shrinks_hottest_key_share_about_20x():
    # At 20M keys, moving the read exponent 0.8 -> 1.2 multiplies the hottest
    # key's share by roughly 20x (26x analytically), so its per-cache read
    # gap shrinks by the same factor at fixed request rate.
    n = 20_000_000
    ratio = zipf_top_share(n, 1.2, 1) / zipf_top_share(n, 0.8, 1)
    assert 15 < ratio < 30


def test_rank_to_key_permutation_decouples_ids():
    perm = key_permutation(1000, seed=11)
    assert sorted(perm.tolist()) == list(range(1000))
    assert perm.tolist() != list(range(1000))
    # stable across calls
    assert key_permutation(1000, seed=11).tolist() == perm.tolist()


def test_config_validation():
    with pytest.raises(ValueError):
        WorkloadConfig(n_keys=0)
    with pytest.raises(ValueError):
        WorkloadConfig(keys_per_txn=0)
    with pytest.raises(ValueError):
        WorkloadConfig(n_keys=3, keys_per_txn=4)
    with pytest.raises(ValueError):
        WorkloadConfig(read_only_ratio=1.5)
    with pytest.raises(ValueError):
        WorkloadConfig(rate_per_client_tps=0)
