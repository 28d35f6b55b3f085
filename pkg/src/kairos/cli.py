"""Command line front end.

    kairos sim run EXPERIMENT [--out DIR] [--set key=value ...] ...
    kairos lease-sweep [--r-ms ...] [--w-ms ...] ...
    kairos check HISTORY.jsonl

Every simulation run re-validates its committed history with the replay
checker; any violation makes the process exit nonzero so a broken run can
never slip through a scripted pipeline quietly.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .checker import check_timestamp_order, load_history
from .config import SimConfig, apply_overrides, config_from_file
from .experiments import SIM_EXPERIMENTS, lease_sweep, run_experiment
from .types import Decision


@click.group()
def main():
    """Transactional KV simulator with leased client caches."""


@main.group()
def sim():
    """Run simulation experiment grids."""


def _base_config(config_path, overrides) -> SimConfig:
    base = config_from_file(config_path) if config_path else SimConfig()
    return apply_overrides(base, overrides)


def _report(rep) -> None:
    click.echo(f"{rep.name}: {len(rep.rows)} rows -> {rep.csv_path}")
    for p in rep.history_paths:
        click.echo(f"  history: {p}")
    if not rep.ok:
        click.echo(f"FAIL: {rep.violations} history violations", err=True)
        sys.exit(1)
    click.echo("history check: ok")


@sim.command("run")
@click.argument("experiment", type=click.Choice(sorted(SIM_EXPERIMENTS)))
@click.option("--out", default="results", show_default=True,
              type=click.Path(file_okay=False),
              help="Directory for the CSV (created if missing).")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON file overriding base config fields.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one base config field by dotted path, e.g. "
                   "workload.alpha_read=1.2. Repeatable.")
@click.option("--commits", type=int, default=None,
              help="Committed txns per cell [default: 30000].")
@click.option("--seeds", default=None, metavar="N,N,...",
              help="Comma-separated seeds [default: per experiment].")
@click.option("--txns", type=int, default=None,
              help="failure-inject only: decided txns to run [default: 1000].")
@click.option("--crash-every", type=int, default=None,
              help="failure-inject only: crash every Nth read-write txn "
                   "[default: 4].")
@click.option("--dump-history", is_flag=True,
              help="Also write each cell's history as JSONL next to the CSV.")
def sim_run(experiment, out, config_path, overrides, commits, seeds, txns,
            crash_every, dump_history):
    """Run EXPERIMENT and write <out>/<EXPERIMENT>.csv."""
    base = _base_config(config_path, overrides)
    params: dict = {"dump_history": dump_history}
    if seeds is not None:
        params["seeds"] = tuple(int(s) for s in seeds.split(",") if s.strip())
    if experiment == "failure-inject":
        if txns is not None:
            params["txns"] = txns
        if crash_every is not None:
            params["crash_every"] = crash_every
    elif commits is not None:
        params["commits"] = commits
    Path(out).mkdir(parents=True, exist_ok=True)
    _report(run_experiment(experiment, base, out, **params))


@main.command("lease-sweep")
@click.option("--out", default="results", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--r-mean", type=float, default=0.001, show_default=True,
              help="Mean gap between reads of the object (seconds).")
@click.option("--w-mean", type=float, default=0.019, show_default=True,
              help="Mean gap between writes of the object (seconds).")
@click.option("--d-max", type=float, default=0.050, show_default=True,
              help="Top of the sweep; points run d = k*r_mean up to this.")
@click.option("--accesses", type=int, default=1_000_000, show_default=True,
              help="Monte Carlo accesses per point.")
@click.option("--seed", type=int, default=7, show_default=True)
def lease_sweep_cmd(out, r_mean, w_mean, d_max, accesses, seed):
    """Analytic fresh-hit model vs its Monte Carlo twin, as CSV."""
    if r_mean <= 0 or d_max < r_mean:
        raise click.BadParameter("need r_mean > 0 and d_max >= r_mean")
    Path(out).mkdir(parents=True, exist_ok=True)
    _report(lease_sweep(out, r_mean_s=r_mean, w_mean_s=w_mean,
                        k_max=int(round(d_max / r_mean)), accesses=accesses,
                        seed=seed))


@main.command("check")
@click.argument("history", type=click.Path(exists=True, dir_okay=False))
def check_cmd(history):
    """Replay a history JSONL dump; exit 1 on any violation."""
    records = load_history(history)
    committed = sum(1 for r in records if r.decision == Decision.COMMIT)
    violations = check_timestamp_order(records)
    click.echo(f"{len(records)} txns, {committed} committed, "
               f"{len(violations)} violations")
    for v in violations[:20]:
        click.echo(f"  txn {v.txn_id} key {v.key}: {v.note} "
                   f"(expected {v.expected}, found {v.found})")
    if len(violations) > 20:
        click.echo(f"  ... and {len(violations) - 20} more")
    if violations:
        sys.exit(1)


if __name__ == "__main__":
    main()
