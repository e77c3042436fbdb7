"""Shared plumbing for the sweep scripts: parse flags, run, write CSV and print a table."""
from __future__ import annotations

import argparse
from pathlib import Path

from hygamp_dcs.harness import load_config_dict, sweep, write_aggregates, write_records


def parser(description: str, default_out: str, trials: int) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--trials", type=int, default=trials)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results") / default_out)
    return ap


def run(config: dict, args) -> None:
    cfg = load_config_dict({**config, "trials": args.trials, "seed": args.seed,
                            "threads": args.threads})
    res = sweep(cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_records(res.records, args.out)
    write_aggregates(res.aggregates, args.out.with_suffix(".summary.csv"))
    print(f"{'algo':14s} {'snr':>5s} {'L':>4s} {'T':>2s} {'p_11':>5s} "
          f"{'TNMSE dB':>14s} {'TAER':>16s} conv")
    for a in res.aggregates:
        print(f"{a.algo:14s} {a.snr_db:5.1f} {a.L:4d} {a.T:2d} {1 - a.p_10:5.2f} "
              f"{a.tnmse_db_mean:7.2f}±{a.tnmse_db_se:5.2f} "
              f"{a.taer_mean:.4f}±{a.taer_se:.4f} {a.converged_rate:.2f}")
    print(f"records -> {args.out}")
