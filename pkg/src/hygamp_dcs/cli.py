"""Command-line entry point: ``simulate``, ``sweep``, ``se`` and ``em-init``.

Exit codes: 0 success, 2 configuration error, 3 every trial (or every SNR0
candidate) diverged.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .harness import (ALGO_NAMES, ConfigError, ExperimentConfig, RunResult,
                      load_config, load_config_dict, run_trials, sweep, write_aggregates,
                      write_records)
from .se import AllDivergedError, se_trajectory_mc, select_snr0

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _algos(text: str) -> list[str]:
    names = [a.strip() for a in text.split(",") if a.strip()]
    if text.strip() == "all":
        return ["hygamp_dcs", "forward_only", "gamp"]
    bad = [a for a in names if a not in ALGO_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown algorithm(s) {bad}; choose from {', '.join(ALGO_NAMES)} or 'all'")
    return names


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hygamp-dcs", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON experiment config")
    common.add_argument("--seed", type=_u64, help="master seed (u64)")
    common.add_argument("--trials", type=_positive, help="trials per cell")
    common.add_argument("--out", type=Path, help="output CSV (stdout if omitted)")
    common.add_argument("--algo", type=_algos,
                        help="comma-separated algorithms or 'all' "
                             f"({', '.join(ALGO_NAMES)})")
    common.add_argument("--threads", type=_positive, help="worker processes")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="trials of a single cell")
    sub.add_parser("sweep", parents=[common], help="trials over the sweep axes")
    se = sub.add_parser("se", parents=[common], help="state-evolution trajectory per cell")
    se.add_argument("--samples", type=_positive, default=100_000)
    se.add_argument("--iters", type=_positive, default=60)
    se.add_argument("--snr0", type=float, default=None,
                    help="run the EM variant initialized at this assumed SNR (dB)")
    sub.add_parser("em-init", parents=[common], help="SNR0 grid report per cell")
    return ap


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else load_config_dict({})
    over = {"seed": args.seed, "trials": args.trials, "threads": args.threads,
            "algorithms": args.algo}
    return cfg.with_overrides(**over)


def _open_out(path: Path | None):
    if path is None:
        return sys.stdout
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def _report(res: RunResult, out: Path | None) -> int:
    fh = _open_out(out)
    try:
        write_records(res.records, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if out is not None:
        write_aggregates(res.aggregates, out.with_suffix(".summary.csv"))
    for a in res.aggregates:
        print(f"cell {a.cell_id} {a.algo:14s} snr={a.snr_db:+.1f} L={a.L} T={a.T} "
              f"p_10={a.p_10:.3g} tnmse={a.tnmse_db_mean:.3f}±{a.tnmse_db_se:.3f} dB "
              f"taer={a.taer_mean:.4f}±{a.taer_se:.4f} conv={a.converged_rate:.2f} "
              f"div={a.divergence_rate:.2f} [{a.status}]", file=sys.stderr)
    if res.all_diverged:
        print("error: every trial diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_se(args, cfg: ExperimentConfig) -> int:
    fh = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "iteration", "tau_r_mean", "tnmse_db", "tnmse_belief_db", "taer"])
        for cell in cfg.cells():
            tr = se_trajectory_mc(cell.params, samples=args.samples, iters=args.iters,
                                  seed=cfg.seed, snr0_db=args.snr0,
                                  pilot_normalize=cfg.system.pilot_normalize)
            for i in range(args.iters):
                w.writerow([cell.cell_id, i + 1, repr(float(tr.tau_r[i].mean())),
                            repr(float(tr.tnmse_db[i])), repr(float(tr.tnmse_belief_db[i])),
                            repr(float(tr.taer[i]))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _cmd_em_init(args, cfg: ExperimentConfig) -> int:
    fh = _open_out(args.out)
    any_ok = False
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "snr0_db", "converged", "converged_at", "max_jump_db",
                    "final_tnmse_db", "chosen", "degraded"])
        for cell in cfg.cells():
            try:
                sel = select_snr0(cell.params, cfg.em.grid, samples=cfg.em.se_samples,
                                  iters=cfg.em.se_iters, seed=cfg.seed,
                                  pilot_normalize=cfg.system.pilot_normalize,
                                  beta_noise_term=cfg.em.beta_noise_term)
            except AllDivergedError as exc:
                print(f"cell {cell.cell_id}: {exc}", file=sys.stderr)
                continue
            any_ok = True
            for c in sel.candidates:
                w.writerow([cell.cell_id, c.snr0_db, int(c.converged),
                            "" if c.converged_at is None else c.converged_at,
                            repr(c.max_jump_db), repr(c.final_tnmse_db),
                            int(c.snr0_db == sel.snr0_db), int(sel.degraded)])
            print(f"cell {cell.cell_id}: SNR0 = {sel.snr0_db:g} dB "
                  f"(known-statistics TNMSE {sel.reference_tnmse_db:.2f} dB)"
                  + (" (degraded)" if sel.degraded else ""), file=sys.stderr)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK if any_ok else EXIT_DIVERGED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "simulate":
            res = run_trials(cfg)
        elif args.command == "sweep":
            res = sweep(cfg)
        elif args.command == "se":
            return _cmd_se(args, cfg)
        else:
            return _cmd_em_init(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with np.errstate(all="ignore"):
        return _report(res, args.out)


if __name__ == "__main__":
    sys.exit(main())
