"""Named experiment matrices over the simulator, emitting stable CSVs.

Each experiment runs a grid of deterministic simulation cells, re-validates
every cell's committed history with the timestamp-order checker, and writes
one CSV whose column order is part of the interface (documented in the
README). Rates are rounded for readability; identical seeds reproduce the
files byte for byte. Histories are dumped as JSONL next to the CSV when
requested, one file per cell.

Cells run sequentially in-process; each builds a fresh cluster from a config
derived off the base config, so nothing leaks between them.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

from .checker import check_timestamp_order, record_to_json
from .config import STRATEGIES, SimConfig
from .lease import fresh_hit_rate, monte_carlo_fresh_rate
from .simnet import Sim
from .types import AbortCause, Decision

_STALE = int(AbortCause.STALE_READ)


@dataclasses.dataclass
class ExperimentReport:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]
    violations: int
    csv_path: Path | None = None
    history_paths: list[Path] = dataclasses.field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0


class _Emitter:
    """Accumulates rows and cell histories for one experiment."""

    def __init__(self, name: str, columns: tuple[str, ...], out_dir,
                 dump_history: bool):
        self.report = ExperimentReport(name, columns, [], 0)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dump_history = dump_history

    def cell(self, cfg: SimConfig, label: str, *, until_committed=None,
             until_decided=None, max_us=1 << 62, crash_plan=None,
             drain_us=0):
        sim = Sim(cfg, crash_plan=crash_plan)
        rec = sim.run(max_us=max_us, until_committed=until_committed,
                      until_decided=until_decided, drain_us=drain_us)
        violations = check_timestamp_order(rec.history)
        self.report.violations += len(violations)
        if self.dump_history and self.out_dir is not None:
            path = self.out_dir / f"{self.report.name}-{label}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                for r in rec.history:
                    fh.write(record_to_json(r))
                    fh.write("\n")
            self.report.history_paths.append(path)
        return sim, rec, len(violations)

    def row(self, *values) -> None:
        assert len(values) == len(self.report.columns)
        self.report.rows.append(tuple(values))

    def finish(self) -> ExperimentReport:
        rep = self.report
        if self.out_dir is not None:
            rep.csv_path = self.out_dir / f"{rep.name}.csv"
            with open(rep.csv_path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(rep.columns)
                w.writerows(rep.rows)
        return rep


def _cell_stats(sim: Sim, rec) -> dict:
    """The shared per-cell metrics most experiment rows report."""
    seconds = sim.loop.now_us / 1e6
    decided = rec.committed + rec.aborted
    hits = rec.fresh_hits + rec.stale_hits
    lookups = hits + sum(c.cache.stats_misses for c in sim.clients)
    return {
        "committed": rec.committed,
        "aborted": rec.aborted,
        "committed_tps": round(rec.committed / seconds, 3) if seconds else 0.0,
        "abort_rate": round(rec.aborted / decided, 6) if decided else 0.0,
        "hit_rate": round(hits / lookups, 6) if lookups else 0.0,
        "fresh_hits": rec.fresh_hits,
        "stale_hits": rec.stale_hits,
        "stale_abort_rate": (round(rec.aborts_by_cause[_STALE] / decided, 6)
                             if decided else 0.0),
    }


def _with_workload(cfg: SimConfig, **fields) -> SimConfig:
    return dataclasses.replace(
        cfg, workload=dataclasses.replace(cfg.workload, **fields))


# -- simulation experiments ----------------------------------------------------

_TAIL = ("committed", "aborted", "committed_tps", "abort_rate", "hit_rate",
         "fresh_hits", "stale_hits", "stale_abort_rate", "violations")


def _tail_values(stats: dict, violations: int) -> tuple:
    return (stats["committed"], stats["aborted"], stats["committed_tps"],
            stats["abort_rate"], stats["hit_rate"], stats["fresh_hits"],
            stats["stale_hits"], stats["stale_abort_rate"], violations)


def strategy_compare(base: SimConfig, out_dir=None, *, commits=30_000,
                     seeds=(1, 2, 3), dump_history=False) -> ExperimentReport:
    """All three invalidation strategies on one workload, a few seeds each."""
    em = _Emitter("strategy-compare",
                  ("strategy", "seed", "mean_stale_window_us") + _TAIL,
                  out_dir, dump_history)
    for strategy in STRATEGIES:
        for seed in seeds:
            cfg = dataclasses.replace(base, strategy=strategy, seed=seed)
            sim, rec, bad = em.cell(cfg, f"{strategy}-s{seed}",
                                    until_committed=commits)
            win = rec.mean_stale_window_us()
            em.row(strategy, seed,
                   round(win, 1) if win is not None else "",
                   *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


def ro_ratio_sweep(base: SimConfig, out_dir=None, *, commits=30_000,
                   seeds=(1,), dump_history=False) -> ExperimentReport:
    """Read-only share vs throughput, per strategy."""
    em = _Emitter("ro-ratio-sweep",
                  ("ro_ratio", "strategy", "seed") + _TAIL,
                  out_dir, dump_history)
    for ratio in (0.5, 0.7, 0.8, 0.9, 0.95, 0.99):
        for strategy in STRATEGIES:
            for seed in seeds:
                cfg = _with_workload(
                    dataclasses.replace(base, strategy=strategy, seed=seed),
                    read_only_ratio=ratio)
                sim, rec, bad = em.cell(cfg, f"r{ratio}-{strategy}-s{seed}",
                                        until_committed=commits)
                em.row(ratio, strategy, seed,
                       *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


def alpha_r_sweep(base: SimConfig, out_dir=None, *, commits=30_000,
                  seeds=(1,), dump_history=False) -> ExperimentReport:
    """Read-popularity skew vs cache effectiveness, per strategy."""
    em = _Emitter("alpha-r-sweep", ("alpha_read", "strategy", "seed") + _TAIL,
                  out_dir, dump_history)
    for alpha in (0.5, 0.8, 0.99, 1.2):
        for strategy in STRATEGIES:
            for seed in seeds:
                cfg = _with_workload(
                    dataclasses.replace(base, strategy=strategy, seed=seed),
                    alpha_read=alpha)
                sim, rec, bad = em.cell(cfg, f"a{alpha}-{strategy}-s{seed}",
                                        until_committed=commits)
                em.row(alpha, strategy, seed,
                       *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


def alpha_rw_sweep(base: SimConfig, out_dir=None, *, commits=30_000,
                   seeds=(1,), dump_history=False) -> ExperimentReport:
    """Write-popularity skew vs contention, per strategy."""
    em = _Emitter("alpha-rw-sweep", ("alpha_rw", "strategy", "seed") + _TAIL,
                  out_dir, dump_history)
    for alpha in (0.3, 0.5, 0.8, 0.99):
        for strategy in STRATEGIES:
            for seed in seeds:
                cfg = _with_workload(
                    dataclasses.replace(base, strategy=strategy, seed=seed),
                    alpha_rw=alpha)
                sim, rec, bad = em.cell(cfg, f"a{alpha}-{strategy}-s{seed}",
                                        until_committed=commits)
                em.row(alpha, strategy, seed,
                       *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


def cache_size_sweep(base: SimConfig, out_dir=None, *, commits=30_000,
                     seeds=(1,), dump_history=False) -> ExperimentReport:
    """Capacity vs hit rate; plateaus once the cacheable set fits."""
    em = _Emitter("cache-size-sweep", ("capacity", "seed") + _TAIL,
                  out_dir, dump_history)
    for capacity in (8, 16, 32, 64, 96, 128, 192, 256, 512):
        for seed in seeds:
            cfg = dataclasses.replace(base, cache_capacity=capacity,
                                      seed=seed)
            sim, rec, bad = em.cell(cfg, f"c{capacity}-s{seed}",
                                    until_committed=commits)
            em.row(capacity, seed, *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


LEASE_POLICIES = ("p:0.1", "p:0.2", "p:0.4", "mean", "ideal")


def lease_policy_compare(base: SimConfig, out_dir=None, *, commits=30_000,
                         seeds=(1, 2, 3),
                         dump_history=False) -> ExperimentReport:
    """Static P(x) and mean-gap lease policies against the ideal search."""
    em = _Emitter("lease-policy-compare", ("policy", "seed") + _TAIL,
                  out_dir, dump_history)
    for policy in LEASE_POLICIES:
        for seed in seeds:
            cfg = dataclasses.replace(base, strategy="lease",
                                      lease_policy=policy, seed=seed)
            label = policy.replace(":", "")
            sim, rec, bad = em.cell(cfg, f"{label}-s{seed}",
                                    until_committed=commits)
            em.row(policy, seed, *_tail_values(_cell_stats(sim, rec), bad))
    return em.finish()


def failure_inject(base: SimConfig, out_dir=None, *, txns=1000,
                   crash_every=4, boundary_slots=18, seeds=(1,),
                   dump_history=False) -> ExperimentReport:
    """Coordinator crashes cycled over every commit-protocol boundary.

    Reports, per boundary slot: how many crashes landed there, how the
    termination protocol resolved the orphans, and the audit counters that
    must stay zero (split decisions, unresolved participants, a transaction
    both installed and logged aborted, log/participant mismatches).
    """
    em = _Emitter(
        "failure-inject",
        ("seed", "boundary", "crashes", "resolved_commit", "resolved_abort",
         "unseen", "unresolved", "split_decisions", "log_mismatches",
         "installed_and_aborted", "violations"),
        out_dir, dump_history)
    base = _with_workload(base, read_only_ratio=0.0)
    for seed in seeds:
        cfg = dataclasses.replace(base, seed=seed)
        plan = cycling_crash_plan(crash_every, boundary_slots)
        sim, rec, bad = em.cell(
            cfg, f"s{seed}", until_decided=txns,
            crash_plan=plan, drain_us=4 * cfg.ctp_timeout_us)
        by_slot: dict[int, list[int]] = {}
        for _, txn_id, boundary in rec.crash_events:
            by_slot.setdefault(boundary, []).append(txn_id)
        installed_and_aborted = sum(
            1 for t in rec.installed_txns
            if rec.decision_of.get(t) == Decision.ABORT)
        for boundary in sorted(by_slot):
            commit = abort = unseen = unresolved = split = mismatch = 0
            for txn_id in by_slot[boundary]:
                ds = set(sim.participant_decisions(txn_id).values())
                if sim.undecided_holders(txn_id):
                    unresolved += 1
                elif len(ds) > 1:
                    split += 1
                elif ds == {Decision.COMMIT}:
                    commit += 1
                elif ds == {Decision.ABORT}:
                    abort += 1
                else:
                    # crashed before any participant saw the txn: nothing
                    # to terminate, vacuously consistent
                    unseen += 1
                logged = rec.decision_of.get(txn_id)
                if logged is not None and ds and ds != {logged}:
                    mismatch += 1
            em.row(seed, boundary, len(by_slot[boundary]), commit, abort,
                   unseen, unresolved, split, mismatch, installed_and_aborted,
                   bad)
    return em.finish()


def cycling_crash_plan(crash_every: int, boundary_slots: int):
    """Crash every crash_every-th read-write txn, walking boundary slots.

    The slot is reduced modulo the txn's own boundary count, so every
    protocol step gets hit even though counts vary with the key spread.
    """
    state = {"txn": 0, "crash": 0}

    def plan(txn_id: int, n_boundaries: int):
        state["txn"] += 1
        if state["txn"] % crash_every:
            return None
        slot = state["crash"] % boundary_slots
        state["crash"] += 1
        return slot % n_boundaries

    return plan


# -- analytic lease sweep ------------------------------------------------------

def lease_sweep(out_dir=None, *, r_mean_s=0.001, w_mean_s=0.019, k_max=50,
                accesses=1_000_000, seed=7) -> ExperimentReport:
    """Analytical fresh-hit model against its Monte Carlo twin.

    Sweeps the lease duration d over k*r_mean for k = 1..k_max. Columns:
    d (seconds), predicted_fresh (model), simulated_fresh / simulated_stale
    (Monte Carlo), hit_rate (Monte Carlo). No cluster simulation is involved,
    so there is no history to check.
    """
    if r_mean_s <= 0 or w_mean_s <= 0:
        raise ValueError("mean gaps must be positive")
    em = _Emitter("lease-sweep",
                  ("d", "predicted_fresh", "simulated_fresh",
                   "simulated_stale", "hit_rate"),
                  out_dir, dump_history=False)
    for k in range(1, k_max + 1):
        d = k * r_mean_s
        mc = monte_carlo_fresh_rate(r_mean_s, w_mean_s, d, accesses,
                                    seed + k)
        em.row(round(d, 9), round(fresh_hit_rate(r_mean_s, w_mean_s, d), 6),
               round(mc.fresh_rate, 6), round(mc.stale_rate, 6),
               round(mc.hit_rate, 6))
    return em.finish()


# -- registry ------------------------------------------------------------------

SIM_EXPERIMENTS = {
    "strategy-compare": strategy_compare,
    "alpha-r-sweep": alpha_r_sweep,
    "alpha-rw-sweep": alpha_rw_sweep,
    "ro-ratio-sweep": ro_ratio_sweep,
    "cache-size-sweep": cache_size_sweep,
    "lease-policy-compare": lease_policy_compare,
    "failure-inject": failure_inject,
}

EXPERIMENTS = dict(SIM_EXPERIMENTS, **{"lease-sweep": lease_sweep})


def run_experiment(name: str, base: SimConfig, out_dir=None,
                   **params) -> ExperimentReport:
    """Dispatch one named experiment; ValueError on an unknown name."""
    if name == "lease-sweep":
        return lease_sweep(out_dir, **params)
    fn = SIM_EXPERIMENTS.get(name)
    if fn is None:
        known = ", ".join(sorted(EXPERIMENTS))
        raise ValueError(f"unknown experiment {name!r} (known: {known})")
    return fn(base, out_dir, **params)
