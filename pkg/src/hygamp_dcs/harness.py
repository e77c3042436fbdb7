"""Metrics, detection rules, experiment configuration and the Monte Carlo trial runner."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import ConfigDict, Field, TypeAdapter, ValidationError, field_validator
from pydantic.dataclasses import dataclass as pdataclass

from .em import run_em_hygamp_dcs
from .gamp import DivergenceError
from .hygamp import ALGORITHMS, EstimationResult, SolverOptions
from .model import (PilotNormalization, SystemParams, make_instance, received_snr_db)
from .se import AllDivergedError, select_snr0

TNMSE_FLOOR_DB = -120.0
CALIBRATION_SEEDS = 50
CALIBRATION_OFFSET = 1 << 32   # spawn keys for held-out calibration seeds

AlgoName = Literal["hygamp_dcs", "gamp", "forward_only", "em_hygamp_dcs"]
ALGO_NAMES: tuple[str, ...] = ("hygamp_dcs", "gamp", "forward_only", "em_hygamp_dcs")

CSV_COLUMNS = ("cell_id", "algo", "seed", "snr_db", "L", "N", "T", "p_a", "p_10",
               "iterations", "converged", "tnmse_db", "taer", "runtime_ms")


class ConfigError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    """TNMSE requested for an all-zero ground truth."""


# --------------------------------------------------------------------------- metrics

def tnmse(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x_true.shape}")
    den = float(np.sum(np.abs(x_true) ** 2))
    if den == 0.0:
        raise UndefinedMetricError("TNMSE undefined for an all-zero ground truth")
    num = float(np.sum(np.abs(x_hat - x_true) ** 2))
    if num == 0.0:
        return TNMSE_FLOOR_DB
    return max(10.0 * math.log10(num / den), TNMSE_FLOOR_DB)


def taer(activity_hat: np.ndarray, activity_true: np.ndarray) -> float:
    if activity_hat.shape != activity_true.shape:
        raise ValueError(f"shape mismatch {activity_hat.shape} vs {activity_true.shape}")
    return float(np.count_nonzero(activity_hat.astype(bool) != activity_true.astype(bool))
                 / activity_true.size)


@pdataclass(config=ConfigDict(extra="forbid"))
class DetectionRule:
    """``posterior``: active iff kappa > threshold. ``power``: active iff |x|^2 > threshold.

    A power threshold of ``None`` is calibrated per cell on held-out seeds.
    """
    rule: Literal["posterior", "power"] = "posterior"
    threshold: Optional[float] = 0.5

    def __post_init__(self):
        if self.rule == "posterior":
            if self.threshold is None or not 0.0 < self.threshold < 1.0:
                raise ValueError("posterior threshold must lie in (0, 1)")
        elif self.threshold is not None and self.threshold < 0.0:
            raise ValueError("power threshold must be non-negative")


def detect_activity(result: EstimationResult, rule: DetectionRule) -> np.ndarray:
    if rule.rule == "posterior":
        return (result.activity_posterior > rule.threshold).astype(np.int8)
    if rule.threshold is None:
        raise ValueError("power rule needs a calibrated threshold")
    return (np.abs(result.x_hat) ** 2 > rule.threshold).astype(np.int8)


def best_power_threshold(powers: Iterable[np.ndarray], truths: Iterable[np.ndarray],
                         grid: np.ndarray) -> float:
    """Threshold in ``grid`` with the lowest pooled TAER (first one on ties)."""
    errors = np.zeros(len(grid))
    for pw, lam in zip(powers, truths):
        errors += [np.count_nonzero((pw > g) != lam.astype(bool)) for g in grid]
    return float(grid[int(np.argmin(errors))])


def power_grid(beta: float) -> np.ndarray:
    return np.concatenate(([0.0], beta * np.logspace(-3, 0.5, 71)))


# --------------------------------------------------------------------------- configuration

_strict = ConfigDict(extra="forbid")


@pdataclass(config=_strict)
class SystemSpec:
    N: int = 1000
    p_a: float = 0.2
    beta: float = 1.0
    pilot_normalize: PilotNormalization = "unit_entry"


@pdataclass(config=_strict)
class SweepAxes:
    snr_db: list[float] = Field(default_factory=lambda: [-10.0])
    L: list[int] = Field(default_factory=lambda: [300])
    T: list[int] = Field(default_factory=lambda: [4])
    p_11: list[float] = Field(default_factory=lambda: [0.75])

    @field_validator("snr_db", "L", "T", "p_11")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("sweep axes must be nonempty")
        return v


@pdataclass(config=_strict)
class SolverSpec:
    epsilon: float = 1e-5
    i_max: int = 200
    damping: float = 1.0
    adaptive_damping: bool = False

    def options(self) -> SolverOptions:
        return SolverOptions(epsilon=self.epsilon, i_max=self.i_max, damping=self.damping,
                             adaptive_damping=self.adaptive_damping)


@pdataclass(config=_strict)
class EmSpec:
    """``snr0_db="auto"`` selects the initialization SNR per cell from ``grid`` by state evolution.

    Numeric SNR0 values are absolute assumed SNRs of the received signal ``Y``.
    """
    snr0_db: Union[float, Literal["auto"]] = "auto"
    grid: list[float] = Field(default_factory=lambda: [float(g) for g in range(-20, 35, 5)])
    se_samples: int = 20_000
    se_iters: int = 60
    beta_noise_term: Literal["std", "variance"] = "std"


@pdataclass(config=_strict)
class ExperimentConfig:
    system: SystemSpec = Field(default_factory=SystemSpec)
    axes: SweepAxes = Field(default_factory=SweepAxes)
    algorithms: list[AlgoName] = Field(default_factory=lambda: ["hygamp_dcs"])
    detection: DetectionRule = Field(default_factory=DetectionRule)
    trials: int = 10
    seed: int = 0
    solver: SolverSpec = Field(default_factory=SolverSpec)
    em: EmSpec = Field(default_factory=EmSpec)
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.algorithms:
            raise ValueError("need at least one algorithm")

    def cells(self) -> list["Cell"]:
        out = []
        for i, (snr, L, T, p11) in enumerate(itertools.product(
                self.axes.snr_db, self.axes.L, self.axes.T, self.axes.p_11)):
            params = SystemParams.from_snr(N=self.system.N, L=L, T=T, p_a=self.system.p_a,
                                           p_10=1.0 - p11, snr_db=snr, beta=self.system.beta)
            out.append(Cell(cell_id=i, snr_db=float(snr), params=params))
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return load_config_dict({**config_to_dict(self), **kw})


_CONFIG_ADAPTER = TypeAdapter(ExperimentConfig)


def load_config_dict(data: dict) -> ExperimentConfig:
    try:
        cfg = _CONFIG_ADAPTER.validate_python(data)
        cfg.cells()   # surfaces invalid (p_a, p_11) combinations
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML (or JSON) document; unknown keys anywhere are rejected."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    return load_config_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _CONFIG_ADAPTER.dump_python(cfg, mode="json")


# --------------------------------------------------------------------------- trials

@dataclasses.dataclass(frozen=True)
class Cell:
    cell_id: int
    snr_db: float
    params: SystemParams


@dataclasses.dataclass
class TrialRecord:
    cell_id: int
    algo: str
    seed: int
    snr_db: float
    L: int
    N: int
    T: int
    p_a: float
    p_10: float
    iterations: int
    converged: bool
    tnmse_db: float       # nan when undefined (all-inactive truth) or diverged
    taer: float           # nan when diverged
    runtime_ms: float
    diverged: bool = False
    taer_alt: float = float("nan")   # the other detection rule, when available

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def trial_seed(master: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _estimate(algo: str, inst, opts: SolverOptions, snr0_db: Optional[float],
              beta_noise_term: str = "std") -> EstimationResult:
    if algo == "em_hygamp_dcs":
        result, _ = run_em_hygamp_dcs(inst.Y, inst.A, snr0_db=snr0_db, opts=opts,
                                      beta_noise_term=beta_noise_term)
        return result
    return ALGORITHMS[algo](inst.Y, inst.A, inst.params, opts)


@dataclasses.dataclass(frozen=True)
class _Task:
    cell: Cell
    seed: int
    algorithms: tuple[str, ...]
    opts: SolverOptions
    pilot_normalize: str
    detection: DetectionRule
    alt_detection: Optional[DetectionRule]
    snr0_db: Optional[float]
    beta_noise_term: str = "std"


def _run_task(task: _Task) -> list[TrialRecord]:
    cell = task.cell
    p = cell.params
    inst = make_instance(p, task.seed, pilot_normalize=task.pilot_normalize)
    out = []
    for algo in task.algorithms:
        t0 = time.perf_counter()
        diverged, failed_at = False, task.opts.i_max
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                res = _estimate(algo, inst, task.opts, task.snr0_db, task.beta_noise_term)
        except DivergenceError as exc:
            diverged, failed_at = True, exc.iteration
        ms = (time.perf_counter() - t0) * 1e3
        rec = TrialRecord(cell_id=cell.cell_id, algo=algo, seed=task.seed, snr_db=cell.snr_db,
                          L=p.L, N=p.N, T=p.T, p_a=p.p_a, p_10=p.p_10,
                          iterations=failed_at if diverged else res.iterations,
                          converged=False if diverged else bool(res.converged),
                          tnmse_db=float("nan"), taer=float("nan"), runtime_ms=ms,
                          diverged=diverged)
        if not diverged:
            try:
                rec.tnmse_db = tnmse(res.x_hat, inst.truth.effective)
            except UndefinedMetricError:
                pass
            rec.taer = taer(detect_activity(res, task.detection), inst.truth.activity)
            if task.alt_detection is not None:
                rec.taer_alt = taer(detect_activity(res, task.alt_detection), inst.truth.activity)
        out.append(rec)
    return out


def _map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _calibration_powers(task: _Task, algo: str):
    p = task.cell.params
    inst = make_instance(p, task.seed, pilot_normalize=task.pilot_normalize)
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            res = _estimate(algo, inst, task.opts, task.snr0_db, task.beta_noise_term)
    except DivergenceError:
        return None
    return np.abs(res.x_hat) ** 2, inst.truth.activity


def calibrate_power_threshold(cfg: ExperimentConfig, cell: Cell, algo: str,
                              snr0_db: Optional[float] = None,
                              n_seeds: int = CALIBRATION_SEEDS) -> float:
    """TAER-minimizing power threshold on held-out seeds disjoint from the trial seeds."""
    tasks = [_Task(cell, trial_seed(cfg.seed, CALIBRATION_OFFSET + k), (algo,),
                   cfg.solver.options(), cfg.system.pilot_normalize, cfg.detection, None, snr0_db,
                   cfg.em.beta_noise_term)
             for k in range(n_seeds)]
    pairs = [r for r in _map(_CalibrationJob(algo), tasks, cfg.threads) if r is not None]
    if not pairs:
        raise AllDivergedError("every calibration run diverged")
    return best_power_threshold([a for a, _ in pairs], [b for _, b in pairs],
                                power_grid(cell.params.beta))


@dataclasses.dataclass(frozen=True)
class _CalibrationJob:
    algo: str

    def __call__(self, task):
        return _calibration_powers(task, self.algo)


@dataclasses.dataclass
class Aggregate:
    cell_id: int
    algo: str
    snr_db: float
    L: int
    N: int
    T: int
    p_a: float
    p_10: float
    trials: int
    tnmse_trials: int
    tnmse_db_mean: float
    tnmse_db_se: float
    taer_mean: float
    taer_se: float
    taer_alt_mean: float
    converged_rate: float
    divergence_rate: float
    iterations_mean: float
    runtime_ms_mean: float
    snr0_db: float = float("nan")
    power_threshold: float = float("nan")
    status: str = "ok"


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def aggregate(records: list[TrialRecord], extras: Optional[dict] = None) -> list[Aggregate]:
    """Per (cell, algorithm) means and standard errors, ordered by (cell, algorithm order)."""
    extras = extras or {}
    groups: dict[tuple[int, str], list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.cell_id, r.algo), []).append(r)
    out = []
    for (cid, algo), rs in groups.items():
        rs = sorted(rs, key=lambda r: r.seed)
        first = rs[0]
        tn, tn_se = _mean_se(r.tnmse_db for r in rs)
        ta, ta_se = _mean_se(r.taer for r in rs)
        alt, _ = _mean_se(r.taer_alt for r in rs)
        div = float(np.mean([r.diverged for r in rs]))
        ex = extras.get((cid, algo), {})
        out.append(Aggregate(
            cell_id=cid, algo=algo, snr_db=first.snr_db, L=first.L, N=first.N, T=first.T,
            p_a=first.p_a, p_10=first.p_10, trials=len(rs),
            tnmse_trials=int(sum(np.isfinite(r.tnmse_db) for r in rs)),
            tnmse_db_mean=tn, tnmse_db_se=tn_se, taer_mean=ta, taer_se=ta_se, taer_alt_mean=alt,
            converged_rate=float(np.mean([r.converged for r in rs])), divergence_rate=div,
            iterations_mean=float(np.mean([r.iterations for r in rs])),
            runtime_ms_mean=float(np.mean([r.runtime_ms for r in rs])),
            snr0_db=ex.get("snr0_db", float("nan")),
            power_threshold=ex.get("power_threshold", float("nan")),
            status="all_diverged" if div == 1.0 else ex.get("status", "ok"),
        ))
    return out


@dataclasses.dataclass
class RunResult:
    records: list[TrialRecord]
    aggregates: list[Aggregate]

    @property
    def all_diverged(self) -> bool:
        return bool(self.records) and all(r.diverged for r in self.records)


def _cell_setup(cfg: ExperimentConfig, cell: Cell, algo: str) -> dict:
    """SNR0 choice for EM and, for the power rule, the calibrated threshold."""
    info: dict = {}
    snr0 = None
    if algo == "em_hygamp_dcs":
        if cfg.em.snr0_db == "auto":
            try:
                sel = select_snr0(cell.params, cfg.em.grid, samples=cfg.em.se_samples,
                                  iters=cfg.em.se_iters, seed=cfg.seed,
                                  pilot_normalize=cfg.system.pilot_normalize,
                                  beta_noise_term=cfg.em.beta_noise_term)
                snr0 = sel.snr0_db
                if sel.degraded:
                    info["status"] = "snr0_degraded"
            except AllDivergedError:
                snr0 = received_snr_db(cell.params, cfg.system.pilot_normalize)
                info["status"] = "snr0_fallback"
        else:
            snr0 = float(cfg.em.snr0_db)
        info["snr0_db"] = snr0
    if cfg.detection.rule == "power" and cfg.detection.threshold is None:
        info["power_threshold"] = calibrate_power_threshold(cfg, cell, algo, snr0)
    return info


def run_cells(cfg: ExperimentConfig, cells: list[Cell]) -> RunResult:
    opts = cfg.solver.options()
    seeds = [trial_seed(cfg.seed, i) for i in range(cfg.trials)]
    tasks = []
    extras = {}
    for cell in cells:
        for algo in cfg.algorithms:
            extras[(cell.cell_id, algo)] = _cell_setup(cfg, cell, algo)
        # one task per (algorithm, seed); equal seeds regenerate identical data, so
        # algorithms stay paired
        for algo in cfg.algorithms:
            info = extras[(cell.cell_id, algo)]
            det = cfg.detection
            if "power_threshold" in info:
                det = DetectionRule(rule="power", threshold=info["power_threshold"])
            alt = None
            if det.rule == "power":
                alt = DetectionRule()
            for s in seeds:
                tasks.append(_Task(cell, s, (algo,), opts, cfg.system.pilot_normalize, det, alt,
                                   info.get("snr0_db"), cfg.em.beta_noise_term))
    nested = _map(_run_task, tasks, cfg.threads)
    order = {a: i for i, a in enumerate(cfg.algorithms)}
    seed_pos = {s: i for i, s in enumerate(seeds)}
    records = sorted((r for rs in nested for r in rs),
                     key=lambda r: (r.cell_id, order[r.algo], seed_pos[r.seed]))
    return RunResult(records=records, aggregates=aggregate(records, extras))


def run_trials(cfg: ExperimentConfig) -> RunResult:
    """Trials of a single-cell configuration."""
    cells = cfg.cells()
    if len(cells) != 1:
        raise ConfigError(f"run_trials needs exactly one cell, config has {len(cells)}")
    return run_cells(cfg, cells)


def sweep(cfg: ExperimentConfig) -> RunResult:
    """Trials over the cross product of the sweep axes."""
    return run_cells(cfg, cfg.cells())


# --------------------------------------------------------------------------- persistence

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(records: list[TrialRecord], path_or_file) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])
    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


_PARSERS = {"cell_id": int, "algo": str, "seed": int, "snr_db": float, "L": int, "N": int,
            "T": int, "p_a": float, "p_10": float, "iterations": int,
            "converged": lambda s: s == "1", "tnmse_db": float, "taer": float,
            "runtime_ms": float}


def read_records(path) -> list[TrialRecord]:
    """Parse a trial CSV; columns beyond the fixed set are not stored, so ``diverged``
    is recovered as ``taer`` being missing."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {rd.fieldnames}")
        out = []
        for row in rd:
            kw = {k: _PARSERS[k](row[k]) for k in CSV_COLUMNS}
            out.append(TrialRecord(**kw, diverged=math.isnan(kw["taer"])))
        return out


def write_aggregates(aggs: list[Aggregate], path) -> None:
    names = [f.name for f in dataclasses.fields(Aggregate)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for a in aggs:
            w.writerow([_fmt(getattr(a, n)) for n in names])
