"""Command-line front end: config parsing, subcommand dispatch, run reports.

Config files are TOML with [model], [grid], [experiment] and [output]
sections; unknown keys are rejected so typos in sweep definitions fail fast.
Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .estimators import (
    MissingIncrementsError,
    ZeroDenominatorError,
    mle_continuous,
    mle_discrete,
    theoretical_std,
)
from .experiments import (
    ESTIMATOR_CHOICES,
    KINDS,
    ExperimentConfig,
    SweepPoint,
    run_experiment,
    write_outputs,
)
from .model import ModelParams, build_eigensequence
from .simulate import (
    SimGrid,
    read_observations,
    simulate_ensemble,
    simulate_observations,
    subsample,
    write_observations,
)

__all__ = ["ConfigError", "CliConfig", "parse_config", "main"]

OUTPUT_DIR_ENV = "SPDELAB_OUTPUT_DIR"

# Streaming kicks in when the full fine-grid ensemble would exceed this many
# bytes and only coarse observations are required.
_STREAM_BYTES = 1 << 30

_SCHEMA = {
    "model": {"theta0", "beta", "gamma", "sigma", "dimension", "initial_modes"},
    "grid": {"n", "m", "t", "oversample"},
    "experiment": {
        "kind",
        "replications",
        "sweep",
        "estimator",
        "id",
        "master_seed",
        "fine_steps",
        "m_ladder",
        "n",
        "t",
    },
    "output": {"dir"},
}


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or fails validation."""


@dataclass(frozen=True)
class CliConfig:
    model: ModelParams
    grid: SimGrid | None
    grid_modes: int | None
    experiment: ExperimentConfig | None
    output_dir: str
    master_seed: int
    threads: int | None


def _require_number(section: str, data: dict, key: str, integer: bool = False):
    if key not in data:
        raise ConfigError(f"missing required key {section}.{key}")
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if integer:
        if not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    return float(value)


def _check_schema(raw: dict, path: str) -> None:
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        for key in content:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")


def _build_model(section: dict) -> ModelParams:
    theta0 = _require_number("model", section, "theta0")
    if theta0 <= 0:
        raise ConfigError(f"model.theta0 must be positive, got {theta0}")
    beta = _require_number("model", section, "beta")
    if beta <= 0:
        raise ConfigError(f"model.beta must be positive, got {beta}")
    gamma = _require_number("model", section, "gamma")
    if gamma < 0:
        raise ConfigError(f"model.gamma must be nonnegative, got {gamma}")
    sigma = _require_number("model", section, "sigma")
    if sigma < 0:
        raise ConfigError(f"model.sigma must be nonnegative, got {sigma}")
    dimension = _require_number("model", section, "dimension", integer=True)
    if dimension < 1:
        raise ConfigError(f"model.dimension must be >= 1, got {dimension}")
    initial = section.get("initial_modes")
    if initial is not None:
        if not isinstance(initial, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in initial
        ):
            raise ConfigError("model.initial_modes must be a list of numbers")
        initial = tuple(float(v) for v in initial)
    return ModelParams(
        theta0=theta0, beta=beta, gamma=gamma, sigma=sigma,
        dimension=dimension, initial_modes=initial,
    )


def _build_grid(section: dict):
    n = _require_number("grid", section, "n", integer=True)
    m = _require_number("grid", section, "m", integer=True)
    t = _require_number("grid", section, "t")
    oversample = section.get("oversample", 8)
    if not isinstance(oversample, int) or isinstance(oversample, bool):
        raise ConfigError(f"grid.oversample must be an integer, got {oversample!r}")
    try:
        grid = SimGrid(T=t, M=m, oversample=oversample)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    if n < 1:
        raise ConfigError(f"grid.n must be >= 1, got {n}")
    return grid, n


def _build_experiment(
    section: dict, model: ModelParams, kind: str | None, seed: int, oversample: int
) -> ExperimentConfig:
    file_kind = section.get("kind")
    if file_kind is not None and file_kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {file_kind!r}")
    if kind is None:
        kind = file_kind
    elif file_kind is not None and file_kind != kind:
        raise ConfigError(
            f"experiment.kind={file_kind!r} does not match requested subcommand kind {kind!r}"
        )
    if kind is None:
        raise ConfigError("experiment.kind is missing (set it in the file or on the command line)")

    replications = section.get("replications", 100)
    if not isinstance(replications, int) or isinstance(replications, bool):
        raise ConfigError(f"experiment.replications must be an integer, got {replications!r}")
    estimator = section.get("estimator", "discrete")
    if estimator not in ESTIMATOR_CHOICES:
        raise ConfigError(f"experiment.estimator must be one of {ESTIMATOR_CHOICES}")
    experiment_id = section.get("id")

    kwargs = {}
    if kind == "rates":
        for key in ("fine_steps", "m_ladder", "n", "t"):
            if key not in section:
                raise ConfigError(f"missing required key experiment.{key} for rates runs")
        ladder = section["m_ladder"]
        if not isinstance(ladder, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in ladder
        ):
            raise ConfigError("experiment.m_ladder must be a list of integers")
        n = _require_number("experiment", section, "n", integer=True)
        t = _require_number("experiment", section, "t")
        sweep = tuple(SweepPoint(n, int(m), t) for m in ladder)
        kwargs["fine_steps"] = _require_number("experiment", section, "fine_steps", integer=True)
        kwargs["m_ladder"] = tuple(int(m) for m in ladder)
    else:
        raw_sweep = section.get("sweep")
        if not isinstance(raw_sweep, list) or not raw_sweep:
            raise ConfigError("experiment.sweep must be a nonempty list of [N, M, T] triples")
        sweep = []
        for i, entry in enumerate(raw_sweep):
            if not isinstance(entry, list) or len(entry) != 3:
                raise ConfigError(f"experiment.sweep[{i}] must be an [N, M, T] triple")
            n_pt, m_pt, t_pt = entry
            if not isinstance(n_pt, int) or not isinstance(m_pt, int):
                raise ConfigError(f"experiment.sweep[{i}]: N and M must be integers")
            sweep.append(SweepPoint(n_pt, m_pt, float(t_pt)))
        sweep = tuple(sweep)

    try:
        return ExperimentConfig(
            kind=kind,
            model=model,
            sweep=sweep,
            replications=replications,
            master_seed=seed,
            oversample=oversample,
            estimator=estimator,
            experiment_id=experiment_id,
            **kwargs,
        )
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc


def parse_config(path: str, overrides: dict | None = None, kind: str | None = None) -> CliConfig:
    """Load and validate a TOML config, applying command-line overrides.

    Overrides win over file values; the output directory falls back to the
    SPDELAB_OUTPUT_DIR environment variable, then the working directory.
    """
    overrides = overrides or {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_schema(raw, path)
    if "model" not in raw:
        raise ConfigError(f"{path}: missing required section [model]")
    model = _build_model(raw["model"])

    grid = grid_modes = None
    if "grid" in raw:
        grid, grid_modes = _build_grid(raw["grid"])

    exp_section = raw.get("experiment", {})
    file_seed = exp_section.get("master_seed", 0)
    if not isinstance(file_seed, int) or isinstance(file_seed, bool):
        raise ConfigError(f"experiment.master_seed must be an integer, got {file_seed!r}")
    master_seed = overrides.get("seed") if overrides.get("seed") is not None else file_seed

    experiment = None
    if "experiment" in raw or kind is not None:
        oversample = raw.get("grid", {}).get("oversample", 8)
        if not isinstance(oversample, int) or isinstance(oversample, bool):
            raise ConfigError(f"grid.oversample must be an integer, got {oversample!r}")
        experiment = _build_experiment(exp_section, model, kind, master_seed, oversample)

    output_dir = (
        overrides.get("out")
        or raw.get("output", {}).get("dir")
        or os.environ.get(OUTPUT_DIR_ENV)
        or "."
    )
    if not isinstance(output_dir, str):
        raise ConfigError(f"output.dir must be a string, got {output_dir!r}")

    return CliConfig(
        model=model,
        grid=grid,
        grid_modes=grid_modes,
        experiment=experiment,
        output_dir=output_dir,
        master_seed=master_seed,
        threads=overrides.get("threads"),
    )


def _overrides_from(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "out": getattr(args, "out", None),
    }


def _cmd_eigs(args) -> int:
    eigs = build_eigensequence(args.dim, args.count)
    print(" ".join(f"{v:.5f}" for v in eigs.lambdas))
    ratio = eigs.lambdas[-1] ** 2 * args.count ** (-2.0 / args.dim)
    print(f"weyl ratio lambda_N^2 N^(-2/d) = {ratio:.5f}  (limit varpi = {eigs.varpi:.5f})")
    return 0


def _cmd_simulate(args) -> int:
    cfg = parse_config(args.config, _overrides_from(args))
    if cfg.grid is None:
        raise ConfigError("simulate needs a [grid] section (n, m, t, oversample)")
    eigs = build_eigensequence(cfg.model.dimension, cfg.grid_modes)
    fine_bytes = 8 * cfg.grid_modes * (cfg.grid.fine_steps + 1)
    if args.stream or fine_bytes > _STREAM_BYTES:
        obs = simulate_observations(
            cfg.model, eigs, cfg.grid, cfg.grid_modes, cfg.master_seed, args.replication
        )
    else:
        ens = simulate_ensemble(
            cfg.model, eigs, cfg.grid, cfg.grid_modes, cfg.master_seed, args.replication
        )
        obs = subsample(ens)
    out = args.out or os.path.join(cfg.output_dir, "observations.bin")
    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    write_observations(obs, out)
    print(f"wrote {obs.n_modes} x {obs.M + 1} observations (T={obs.T}) to {out}")
    return 0


def _cmd_estimate(args) -> int:
    cfg = parse_config(args.config, _overrides_from(args))
    if args.obs:
        obs = read_observations(args.obs)
        eigs = build_eigensequence(cfg.model.dimension, obs.n_modes)
        rec = mle_discrete(obs, cfg.model, eigs)
        estimates = [rec]
    else:
        if cfg.grid is None:
            raise ConfigError("estimate without --obs needs a [grid] section to simulate")
        eigs = build_eigensequence(cfg.model.dimension, cfg.grid_modes)
        ens = simulate_ensemble(
            cfg.model, eigs, cfg.grid, cfg.grid_modes, cfg.master_seed, args.replication
        )
        estimates = [
            mle_discrete(subsample(ens), cfg.model, eigs),
            mle_continuous(ens, cfg.model, eigs),
        ]
    for rec in estimates:
        std = theoretical_std(cfg.model, eigs.varpi, rec.N, rec.T)
        print(
            f"theta_{rec.estimator_kind} = {rec.theta_hat:.6f}  z = {rec.z_score:+.4f}  "
            f"(N={rec.N}, M={rec.M}, T={rec.T}, theoretical std {std:.6f})"
        )
    return 0


def _cmd_experiment(args) -> int:
    cfg = parse_config(args.config, _overrides_from(args), kind=args.kind)
    records, failures, summary = run_experiment(cfg.experiment, workers=cfg.threads)
    paths = write_outputs(records, summary, cfg.output_dir)
    for point in summary["points"]:
        bits = [
            f"N={point['N']} M={point['M']} T={point['T']} [{point['estimator']}]",
            f"ok={point['replications_ok']} failed={point['replications_failed']}",
        ]
        if point["mean"] is not None:
            bits.append(f"mean={point['mean']:.6f} rmse={point['rmse']:.6f}")
        if point.get("ks_p_value") is not None:
            bits.append(f"ks_p={point['ks_p_value']:.4f}")
        if point.get("var_fisher_product") is not None:
            bits.append(f"var*info={point['var_fisher_product']:.4f}")
        print("  ".join(bits))
    if summary.get("rates"):
        for label, fit in summary["rates"]["slopes"].items():
            if fit.get("slope") is None:
                print(f"slope[{label}]: skipped ({fit.get('skipped')})")
            else:
                print(
                    f"slope[{label}] = {fit['slope']:+.3f} (r^2 {fit['r_squared']:.4f}, "
                    f"bound {fit['bound_exponent']:+.1f})"
                )
    print(f"records: {paths['records']}")
    print(f"summary: {paths['summary']}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="Spectral simulation and drift-estimation laboratory "
        "for the fractional stochastic heat equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eigs = sub.add_parser("eigs", help="print leading eigenvalue roots and the Weyl ratio")
    p_eigs.add_argument("--dim", type=int, required=True)
    p_eigs.add_argument("--count", type=int, required=True)

    p_sim = sub.add_parser("simulate", help="simulate observations and write a binary dump")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--replication", type=int, default=0)
    p_sim.add_argument("--out", help="dump file path")
    p_sim.add_argument("--stream", action="store_true", help="force streaming simulation")

    p_est = sub.add_parser("estimate", help="estimate the drift from a dump or a simulation")
    p_est.add_argument("--config", required=True)
    p_est.add_argument("--obs", help="observation dump to read (otherwise simulate)")
    p_est.add_argument("--seed", type=int)
    p_est.add_argument("--replication", type=int, default=0)

    p_exp = sub.add_parser("experiment", help="run a Monte Carlo study and write outputs")
    p_exp.add_argument("kind", choices=KINDS)
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int)
    p_exp.add_argument("--threads", type=int)
    p_exp.add_argument("--out", help="output directory")
    return parser


_COMMANDS = {
    "eigs": _cmd_eigs,
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; usage errors are
        # validation failures under this tool's exit-code contract.
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ZeroDenominatorError, MissingIncrementsError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
