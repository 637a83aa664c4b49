"""Monte Carlo experiment harness.

Each experiment sweeps grid coordinates (N, M, T), runs independent
replications keyed by (master_seed, replication, mode), and aggregates
estimator statistics next to the hypothesis-condition values that the
asymptotic theory attaches to them, so a run always shows whether its
configuration is inside the guaranteed regime.  Records and summaries are
pure functions of the configuration and master seed: reruns with any worker
count produce identical record files.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .estimators import (
    ZeroDenominatorError,
    decomposition_terms,
    mle_continuous,
    mle_discrete,
    theoretical_std,
)
from .model import EigenSequence, ModelParams, build_eigensequence, fisher_information
from .simulate import SimGrid, simulate_ensemble, subsample
from .stats import ks_test, loglog_slope

__all__ = [
    "KINDS",
    "CSV_COLUMNS",
    "SweepPoint",
    "ExperimentConfig",
    "rates_config",
    "run_experiment",
    "run_normality",
    "run_consistency",
    "run_rate_verification",
    "run_fisher_efficiency",
    "summarize_records",
    "write_outputs",
    "read_records",
]

KINDS = ("normality", "consistency", "consistency_fixed_MT", "rates", "fisher")
ESTIMATOR_CHOICES = ("discrete", "continuous", "both")

CSV_COLUMNS = [
    "experiment_id",
    "N",
    "M",
    "T",
    "replication",
    "estimator",
    "theta_hat",
    "z_score",
    "Y_coarse",
    "Y_fine",
    "I_coarse",
    "I_fine",
    "V",
    "seed",
]

# KS p-values from the asymptotic distribution are unreliable below this many
# replications; summaries flag such points instead of hiding them.
_KS_MIN_SAMPLE = 100
# Fraction of failed replications (degenerate denominators) tolerated per
# sweep point before the whole run aborts.
_FAIL_FRACTION_ABORT = 0.01


@dataclass(frozen=True)
class SweepPoint:
    N: int
    M: int
    T: float

    def __post_init__(self):
        if self.N < 1 or self.M < 1 or not self.T > 0:
            raise ValueError(f"invalid sweep point N={self.N} M={self.M} T={self.T}")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: ModelParams
    sweep: tuple[SweepPoint, ...]
    replications: int = 100
    master_seed: int = 0
    oversample: int = 8
    output_dir: str | None = None
    estimator: str = "discrete"
    experiment_id: str | None = None
    fine_steps: int | None = None
    m_ladder: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.oversample < 1:
            raise ValueError(f"oversample must be >= 1, got {self.oversample}")
        if self.estimator not in ESTIMATOR_CHOICES:
            raise ValueError(f"estimator must be one of {ESTIMATOR_CHOICES}")
        sweep = tuple(p if isinstance(p, SweepPoint) else SweepPoint(*p) for p in self.sweep)
        object.__setattr__(self, "sweep", sweep)
        if not sweep:
            raise ValueError("sweep must contain at least one (N, M, T) point")
        coords = [(p.N, p.M, p.T) for p in sweep]
        if len(set(coords)) != len(coords):
            raise ValueError("sweep points must be unique")
        if self.kind == "rates":
            self._validate_rates()
        elif self.kind == "consistency_fixed_MT":
            if len({(p.M, p.T) for p in sweep}) != 1:
                raise ValueError("consistency_fixed_MT requires a single (M, T) across the sweep")

    def _validate_rates(self):
        if self.fine_steps is None or self.m_ladder is None:
            raise ValueError("rates experiments need fine_steps and m_ladder")
        ladder = tuple(int(m) for m in self.m_ladder)
        object.__setattr__(self, "m_ladder", ladder)
        if len(ladder) < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("m_ladder must be strictly increasing")
        ratios = {b // a for a, b in zip(ladder, ladder[1:])}
        exact = all(b % a == 0 for a, b in zip(ladder, ladder[1:]))
        if not exact or len(ratios) != 1:
            raise ValueError(f"m_ladder must be geometric, got {ladder}")
        for m in ladder:
            if self.fine_steps % m != 0:
                raise ValueError(f"m_ladder entry {m} does not divide fine_steps={self.fine_steps}")
        if {p.M for p in self.sweep} != set(ladder) or len(self.sweep) != len(ladder):
            raise ValueError("rates sweep must contain exactly the m_ladder levels")
        if len({(p.N, p.T) for p in self.sweep}) != 1:
            raise ValueError("rates sweep must share one (N, T)")

    @property
    def id(self) -> str:
        return self.experiment_id or self.kind


def rates_config(
    model: ModelParams,
    n_modes: int,
    horizon: float,
    fine_steps: int,
    m_ladder,
    **kwargs,
) -> ExperimentConfig:
    """Convenience constructor: one (N, T) with a geometric observation ladder."""
    ladder = tuple(int(m) for m in m_ladder)
    sweep = tuple(SweepPoint(n_modes, m, horizon) for m in ladder)
    return ExperimentConfig(
        kind="rates", model=model, sweep=sweep, fine_steps=fine_steps, m_ladder=ladder, **kwargs
    )


@lru_cache(maxsize=8)
def _eigs_for(dimension: int, count: int) -> EigenSequence:
    return build_eigensequence(dimension, count)


def _estimator_kinds(config: ExperimentConfig) -> tuple[str, ...]:
    if config.kind == "fisher":
        return ("continuous",)
    return {
        "discrete": ("discrete",),
        "continuous": ("continuous",),
        "both": ("discrete", "continuous"),
    }[config.estimator]


def _base_record(config, point, rep, est, terms=None, wall_time=None) -> dict:
    rec = {
        "experiment_id": config.id,
        "N": point.N,
        "M": point.M,
        "T": point.T,
        "replication": rep,
        "estimator": est.estimator_kind,
        "theta_hat": est.theta_hat,
        "z_score": est.z_score,
        "Y_coarse": terms.Y_coarse if terms else None,
        "Y_fine": terms.Y_fine if terms else None,
        "I_coarse": terms.I_coarse if terms else None,
        "I_fine": terms.I_fine if terms else None,
        "V": terms.V if terms else None,
        "seed": config.master_seed,
        "wall_time_s": wall_time,
    }
    return rec


def _sweep_worker(args):
    """Run a block of replications of one sweep point; returns (records, failures)."""
    config, point_idx, reps = args
    point = config.sweep[point_idx]
    eigs = _eigs_for(config.model.dimension, point.N)
    grid = SimGrid(T=point.T, M=point.M, oversample=config.oversample)
    est_kinds = _estimator_kinds(config)
    records, failures = [], []
    for rep in reps:
        start = time.perf_counter()
        ens = simulate_ensemble(config.model, eigs, grid, point.N, config.master_seed, rep)
        obs = subsample(ens) if "discrete" in est_kinds else None
        for kind in est_kinds:
            try:
                if kind == "discrete":
                    est = mle_discrete(obs, config.model, eigs)
                else:
                    est = mle_continuous(ens, config.model, eigs)
            except ZeroDenominatorError as exc:
                failures.append(
                    {
                        "N": point.N,
                        "M": point.M,
                        "T": point.T,
                        "replication": rep,
                        "estimator": kind,
                        "reason": str(exc),
                    }
                )
                continue
            records.append(
                _base_record(config, point, rep, est, wall_time=time.perf_counter() - start)
            )
    return records, failures


def _rates_worker(args):
    """One block of replications of a rate study: a single fine-grid ensemble
    per replication, reinterpreted under every observation ladder level."""
    config, reps = args
    n = config.sweep[0].N
    horizon = config.sweep[0].T
    eigs = _eigs_for(config.model.dimension, n)
    base_m = config.m_ladder[0]
    base_grid = SimGrid(T=horizon, M=base_m, oversample=config.fine_steps // base_m)
    records, failures = [], []
    for rep in reps:
        start = time.perf_counter()
        ens = simulate_ensemble(
            config.model, eigs, base_grid, n, config.master_seed, rep, with_increments=True
        )
        for point in config.sweep:
            level_grid = SimGrid(T=horizon, M=point.M, oversample=config.fine_steps // point.M)
            level_ens = replace(ens, grid=level_grid)
            terms = decomposition_terms(level_ens, config.model, eigs)
            try:
                est = mle_discrete(subsample(level_ens), config.model, eigs)
            except ZeroDenominatorError as exc:
                failures.append(
                    {
                        "N": point.N,
                        "M": point.M,
                        "T": point.T,
                        "replication": rep,
                        "estimator": "discrete",
                        "reason": str(exc),
                    }
                )
                continue
            records.append(
                _base_record(
                    config, point, rep, est, terms=terms, wall_time=time.perf_counter() - start
                )
            )
    return records, failures


def _chunks(n_items: int, workers: int):
    size = max(1, math.ceil(n_items / (max(1, workers) * 4)))
    return [tuple(range(lo, min(lo + size, n_items))) for lo in range(0, n_items, size)]


def _run_tasks(worker, tasks, workers: int):
    if workers <= 1:
        results = [worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(worker, tasks))
    records, failures = [], []
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    return records, failures


def _check_failures(config: ExperimentConfig, failures) -> None:
    per_point = {}
    for f in failures:
        key = (f["N"], f["M"], f["T"], f["estimator"])
        per_point[key] = per_point.get(key, 0) + 1
    for key, count in per_point.items():
        if count / config.replications > _FAIL_FRACTION_ABORT:
            raise RuntimeError(
                f"{count}/{config.replications} replications failed at point "
                f"(N={key[0]}, M={key[1]}, T={key[2]}, estimator={key[3]}); "
                "the configuration is degenerate"
            )


def run_experiment(config: ExperimentConfig, workers: int | None = None):
    """Dispatch on config.kind; returns (records, failures, summary)."""
    runner = {
        "normality": run_normality,
        "consistency": run_consistency,
        "consistency_fixed_MT": run_consistency,
        "rates": run_rate_verification,
        "fisher": run_fisher_efficiency,
    }[config.kind]
    return runner(config, workers=workers)


def _run_sweep_kind(config: ExperimentConfig, workers: int | None):
    workers = workers or os.cpu_count() or 1
    started = time.perf_counter()
    tasks = [
        (config, point_idx, reps)
        for point_idx in range(len(config.sweep))
        for reps in _chunks(config.replications, workers)
    ]
    records, failures = _run_tasks(_sweep_worker, tasks, workers)
    _check_failures(config, failures)
    summary = summarize_records(
        records, failures, config, workers=workers, wall_time_s=time.perf_counter() - started
    )
    return records, failures, summary


def run_normality(config: ExperimentConfig, workers: int | None = None):
    if config.kind != "normality":
        raise ValueError(f"run_normality got kind {config.kind!r}")
    return _run_sweep_kind(config, workers)


def run_consistency(config: ExperimentConfig, workers: int | None = None):
    if config.kind not in ("consistency", "consistency_fixed_MT"):
        raise ValueError(f"run_consistency got kind {config.kind!r}")
    if config.kind == "consistency_fixed_MT":
        model = config.model
        if not 4.0 * model.beta < model.dimension:
            warnings.warn(
                f"fixed-(M, T) consistency sweep with 4*beta={4 * model.beta} >= "
                f"d={model.dimension}: outside the regime where adding modes alone helps",
                stacklevel=2,
            )
    return _run_sweep_kind(config, workers)


def run_fisher_efficiency(config: ExperimentConfig, workers: int | None = None):
    if config.kind != "fisher":
        raise ValueError(f"run_fisher_efficiency got kind {config.kind!r}")
    return _run_sweep_kind(config, workers)


def run_rate_verification(config: ExperimentConfig, workers: int | None = None):
    if config.kind != "rates":
        raise ValueError(f"run_rate_verification got kind {config.kind!r}")
    if len(config.m_ladder) < 4:
        raise ValueError("rate verification needs at least 4 ladder levels")
    workers = workers or os.cpu_count() or 1
    started = time.perf_counter()
    tasks = [(config, reps) for reps in _chunks(config.replications, workers)]
    records, failures = _run_tasks(_rates_worker, tasks, workers)
    _check_failures(config, failures)
    summary = summarize_records(
        records, failures, config, workers=workers, wall_time_s=time.perf_counter() - started
    )
    return records, failures, summary


def _conditions(kind: str, model: ModelParams, n: int, m: int, horizon: float) -> dict:
    bd = model.beta / model.dimension
    if kind == "normality":
        return {
            "t_n2bd_over_m": horizon * n ** (2.0 * bd) / m,
            "t3_n6bd_over_m2": horizon**3 * n ** (6.0 * bd) / m**2,
        }
    if kind in ("consistency", "consistency_fixed_MT"):
        return {"t2_n4bdm1_over_m2": horizon**2 * n ** (4.0 * bd - 1.0) / m**2}
    return {}


def _mean_and_se(values: np.ndarray):
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else None
    return mean, se


def _point_summary(config, point, estimator, recs, n_failed) -> dict:
    model = config.model
    thetas = np.array([r["theta_hat"] for r in recs])
    zs = np.array([r["z_score"] for r in recs])
    n_ok = thetas.size
    entry = {
        "N": point.N,
        "M": point.M,
        "T": point.T,
        "estimator": estimator,
        "replications_ok": int(n_ok),
        "replications_failed": int(n_failed),
        "conditions": _conditions(config.kind, model, point.N, point.M, point.T),
        "std_theory": theoretical_std(
            model, _eigs_for(model.dimension, point.N).varpi, point.N, point.T
        ),
    }
    if n_ok == 0:
        entry.update(
            mean=None, bias=None, rmse=None, std_emp=None, ks_statistic=None,
            ks_p_value=None, ks_insufficient_sample=True, degenerate=True,
        )
        return entry
    mean = float(np.mean(thetas))
    rmse = float(np.sqrt(np.mean((thetas - model.theta0) ** 2)))
    std_emp = float(np.std(thetas, ddof=1)) if n_ok > 1 else None
    ks = ks_test(zs)
    entry.update(
        mean=mean,
        bias=mean - model.theta0,
        rmse=rmse,
        std_emp=std_emp,
        ks_statistic=ks.statistic,
        ks_p_value=ks.p_value,
        ks_insufficient_sample=n_ok < _KS_MIN_SAMPLE,
        degenerate=bool(n_ok > 1 and std_emp == 0.0),
    )
    if config.kind == "fisher":
        eigs = _eigs_for(model.dimension, point.N)
        info = fisher_information(model, eigs, point.N, point.T)
        var_emp = float(np.var(thetas, ddof=1)) if n_ok > 1 else None
        entry["fisher_information"] = info
        entry["var_fisher_product"] = None if var_emp is None else var_emp * info
        entry["low_precision"] = n_ok < 100
    return entry


def _rates_summary(config, records) -> dict:
    levels = []
    for point in config.sweep:
        recs = [r for r in records if r["M"] == point.M and r["estimator"] == "discrete"]
        y_sq = np.array([(r["Y_coarse"] - r["Y_fine"]) ** 2 for r in recs])
        i_sq = np.array([(r["I_coarse"] - r["I_fine"]) ** 2 for r in recs])
        v_sq = np.array([r["V"] ** 2 for r in recs])
        (y_mean, y_se), (i_mean, i_se), (v_mean, v_se) = map(_mean_and_se, (y_sq, i_sq, v_sq))
        levels.append(
            {
                "M": point.M,
                "y_sq_mean": y_mean, "y_sq_se": y_se,
                "i_sq_mean": i_mean, "i_sq_se": i_se,
                "v_sq_mean": v_mean, "v_sq_se": v_se,
            }
        )
    slopes = {}
    for key, label in (("y_sq_mean", "y"), ("i_sq_mean", "i"), ("v_sq_mean", "v")):
        values = [(lvl["M"], lvl[key]) for lvl in levels]
        if all(v == 0.0 for _, v in values):
            slopes[label] = {"slope": None, "skipped": "all discrepancies are exactly zero"}
        else:
            fit = loglog_slope(values)
            slopes[label] = {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "bound_exponent": -1.0 if label == "y" else -2.0,
            }
    return {"levels": levels, "slopes": slopes}


def summarize_records(
    records,
    failures,
    config: ExperimentConfig,
    workers: int | None = None,
    wall_time_s: float | None = None,
) -> dict:
    """Aggregate records into the summary document (pure function of inputs)."""
    model = config.model
    fail_count = {}
    for f in failures:
        key = (f["N"], f["M"], f["T"], f["estimator"])
        fail_count[key] = fail_count.get(key, 0) + 1
    points = []
    for point in config.sweep:
        for estimator in _estimator_kinds(config):
            recs = [
                r
                for r in records
                if (r["N"], r["M"], r["T"], r["estimator"])
                == (point.N, point.M, point.T, estimator)
            ]
            n_failed = fail_count.get((point.N, point.M, point.T, estimator), 0)
            points.append(_point_summary(config, point, estimator, recs, n_failed))
    summary = {
        "experiment": {
            "id": config.id,
            "kind": config.kind,
            "replications": config.replications,
            "master_seed": config.master_seed,
            "oversample": config.oversample,
            "estimator": config.estimator,
            "sweep": [[p.N, p.M, p.T] for p in config.sweep],
            "model": {
                "theta0": model.theta0,
                "beta": model.beta,
                "gamma": model.gamma,
                "sigma": model.sigma,
                "dimension": model.dimension,
            },
        },
        "provenance": {"workers": workers, "wall_time_s": wall_time_s},
        "points": points,
    }
    if config.kind == "rates":
        summary["experiment"]["fine_steps"] = config.fine_steps
        summary["experiment"]["m_ladder"] = list(config.m_ladder)
        summary["rates"] = _rates_summary(config, records)
    if config.kind == "consistency_fixed_MT":
        summary["experiment"]["regime_4b_lt_d"] = bool(4.0 * model.beta < model.dimension)
    return summary


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path: str, writer) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".out-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"failed writing {path}: {exc}") from exc


def write_outputs(records, summary, output_dir: str) -> dict:
    """Persist sorted records as CSV and the summary as JSON, atomically.

    Rows are sorted by (N, M, T, replication, estimator) so files from runs
    with different worker counts are byte-identical.
    """
    os.makedirs(output_dir, exist_ok=True)
    experiment_id = summary["experiment"]["id"]
    records_path = os.path.join(output_dir, f"{experiment_id}_records.csv")
    summary_path = os.path.join(output_dir, f"{experiment_id}_summary.json")

    ordered = sorted(
        records, key=lambda r: (r["N"], r["M"], r["T"], r["replication"], r["estimator"])
    )

    def write_csv(fh):
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in ordered:
            writer.writerow([_cell(rec[col]) for col in CSV_COLUMNS])

    def write_json(fh):
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    _atomic_write(records_path, write_csv)
    _atomic_write(summary_path, write_json)
    return {"records": records_path, "summary": summary_path}


_INT_COLUMNS = {"N", "M", "replication", "seed"}
_STR_COLUMNS = {"experiment_id", "estimator"}


def read_records(path: str):
    """Parse a records CSV back into typed dicts (inverse of write_outputs)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for key, raw in row.items():
                if key in _STR_COLUMNS:
                    rec[key] = raw
                elif raw == "":
                    rec[key] = None
                elif key in _INT_COLUMNS:
                    rec[key] = int(raw)
                else:
                    rec[key] = float(raw)
            out.append(rec)
    return out
