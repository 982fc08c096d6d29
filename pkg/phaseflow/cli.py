"""Command line interface: simulate instances, run solvers and sweeps, run the check suite."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import colorlog
import numpy as np

from . import __version__
from .checks import FAULTS, kaczmarz_nulling_residual, run_check_suite
from .codec import load_ensemble, save_ensemble
from .config import MU_AUTO, CliConfig, SolverEntry, load_cli_config, read_config
from .const import (
    ALGO_AF,
    ALGO_KACZMARZ,
    ALGO_PIE,
    ALGO_SAF,
    ALGORITHMS,
    CHECK_REPORT_FILENAME,
    CHECK_STREAM_TAG,
    CONF_SOLVERS,
    EXIT_CHECK_FAILURE,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ABORT,
    EXIT_OK,
    KACZMARZ_NULL_TOL,
    MANIFEST_FILENAME,
    MIN_RATE_POINTS,
    RNG_ALGORITHM,
    SAMPLING_UNIFORM,
    SAMPLING_VARIANCE_REDUCING,
)
from .errors import ConfigError, NumericalAbortError, PhaseFlowError
from .harness import (
    AggregateCurve,
    ExperimentPlan,
    PlannedRun,
    TraceSet,
    build_instance,
    check_descent,
    check_weighted_sum,
    export_trace_set,
    fit_rate,
    format_float,
    run_trials,
    write_json,
)
from .loss import LossSpec, loss_value
from .measurement import MeasurementEnsemble
from .rng import SeededRng
from .solvers import (
    ConstantSchedule,
    PolynomialSchedule,
    SolverConfig,
    StepSchedule,
    af_budget,
    auto_step_size,
    corollary_budget_decaying,
    decaying_gradient_bound,
    pie_equivalent_saf_step,
    step_condition_report,
    theorem_budget_constant,
)
from .stochastic import (
    AbcConstants,
    SamplingDistribution,
    abc_constants,
    variance_reducing_distribution,
)

_LOGGER = logging.getLogger(__name__)

_RATE_MARGIN = 0.05
_NULLING_STEPS = 1000

_SOLVER_FLAGS = ("algo", "eps", "mu", "theta", "alpha0", "iters", "k")


def _coerce_value(raw: str) -> Any:
    """Convert command-line overrides into JSON scalars when possible."""

    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("null", "none"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass

    try:
        return float(raw)
    except ValueError:
        return raw


def _parse_overrides(pairs: Sequence[str] | None) -> dict[str, Any]:
    """Parse ``key=value`` pairs into a dictionary."""

    overrides: dict[str, Any] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"invalid override {pair!r}, expected section.key=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("override keys cannot be empty")
        overrides[key] = _coerce_value(value.strip())
    return overrides


def _mu_value(raw: str) -> str | float:
    if raw == MU_AUTO:
        return MU_AUTO
    try:
        return float(raw)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {raw!r}") from err


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Path to a JSON configuration file")
    common.add_argument("--out", help="Output directory (default: from config, else 'out')")
    common.add_argument("--seed", type=int, help="Seed of the instance, trials or check suite")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override a config value, e.g. instance.d=32 (may be repeated)",
    )
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
        help="Set logging verbosity",
    )

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--algo", choices=ALGORITHMS, help="Iteration to run")
    solver.add_argument("--eps", type=float, help="Smoothing parameter of the loss")
    solver.add_argument("--mu", type=_mu_value, help="Base step size or 'auto'")
    solver.add_argument("--theta", type=float, help="Decay exponent offset in (0, 1/2)")
    solver.add_argument("--alpha0", type=float, help="PIE step alpha when --mu is auto")
    solver.add_argument("--iters", type=int, help="Iterations per trial")
    solver.add_argument("--k", type=int, help="Mini-batch size")
    solver.add_argument("--trials", type=int, help="Independent trials per configuration")
    solver.add_argument("--workers", type=int, help="Trials run concurrently")
    solver.add_argument(
        "--ensemble", help="Ensemble file to solve (default: <out>/ensemble.json)"
    )

    parser = argparse.ArgumentParser(
        prog="phaseflow",
        description="Stochastic amplitude-flow phase retrieval experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser(
        "simulate", parents=[common], help="Draw an instance and write its ensemble file"
    )
    simulate.add_argument("--ensemble", help="Ensemble file to write")
    commands.add_parser("solve", parents=[common, solver], help="Run one solver configuration")
    commands.add_parser(
        "sweep", parents=[common, solver], help="Run every configuration of the solvers list"
    )
    check = commands.add_parser("check", parents=[common], help="Run the self-check suite")
    check.add_argument("--eps", type=float, help="Smoothing used by the gradient checks")
    check.add_argument("--fd", action="store_true", help="Only run the finite-difference check")
    check.add_argument("--fault", choices=FAULTS, help="Inject a known defect")
    return parser


def _flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Translate flags into dotted config overrides for ``args.command``."""

    overrides: dict[str, Any] = {}
    if args.out is not None:
        overrides["output"] = args.out
    if getattr(args, "ensemble", None) is not None:
        overrides["ensemble"] = args.ensemble
    seed_key = {
        "simulate": "instance.seed",
        "solve": "harness.seed",
        "sweep": "harness.seed",
        "check": "check.seed",
    }[args.command]
    if args.seed is not None:
        overrides[seed_key] = args.seed

    if args.command == "check":
        if args.eps is not None:
            overrides["check.eps"] = args.eps
        if args.fd:
            overrides["check.fd"] = True
        if args.fault is not None:
            overrides["check.fault"] = args.fault
    elif args.command in ("solve", "sweep"):
        for key in ("trials", "workers"):
            if getattr(args, key) is not None:
                overrides[f"harness.{key}"] = getattr(args, key)
        sections = ["solver"]
        if args.command == "sweep" and args.config is not None:
            entries = read_config(args.config).get(CONF_SOLVERS)
            if isinstance(entries, list):
                sections.extend(f"{CONF_SOLVERS}.{index}" for index in range(len(entries)))
        for key in _SOLVER_FLAGS:
            value = getattr(args, key)
            if value is not None:
                overrides.update({f"{section}.{key}": value for section in sections})
    return overrides


def _configure_logging(level: str) -> None:
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(
        colorlog.ColoredFormatter(
            "%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s",
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "bold_red",
            },
        )
    )
    logging.basicConfig(level=getattr(logging, level), handlers=[handler], force=True)


def _print_values(values: dict[str, float | int]) -> None:
    for key, value in values.items():
        text = str(value) if isinstance(value, int) else format_float(value)
        print(f"{key}={text}")


def _ensemble_constants(ensemble: MeasurementEnsemble) -> dict[str, float | int]:
    return {
        "d": ensemble.d,
        "R": ensemble.num_blocks,
        "m": ensemble.rows,
        "norm": ensemble.norm,
        "frobenius_norm": ensemble.frobenius_norm,
    }


def _write_manifest(cfg: CliConfig, command: str, outputs: Sequence[Path]) -> Path:
    path = cfg.output / MANIFEST_FILENAME
    write_json(
        {
            "command": command,
            "config_hash": cfg.config_hash,
            "seeds": {
                "instance": cfg.instance.seed,
                "noise": cfg.instance.noise.seed,
                "harness": cfg.harness.seed,
                "check": cfg.check.seed,
            },
            "version": __version__,
            "numpy": np.__version__,
            "rng": RNG_ALGORITHM,
            "outputs": sorted(str(output) for output in outputs),
        },
        path,
    )
    return path


def cmd_simulate(cfg: CliConfig) -> int:
    """Draw the configured instance, write it and print its constants."""

    ensemble, x = build_instance(cfg.instance)
    path = cfg.ensemble_path
    save_ensemble(ensemble, path)
    values = _ensemble_constants(ensemble)
    values["loss_at_signal"] = loss_value(ensemble, x, LossSpec(eps=0.0))
    _print_values(values)
    _write_manifest(cfg, "simulate", [path])
    return EXIT_OK


# Solving


@dataclasses.dataclass(frozen=True, slots=True)
class _ResolvedRun:
    entry: SolverEntry
    config: SolverConfig
    dist: SamplingDistribution
    abc: AbcConstants | None


def _default_sampling(algorithm: str) -> str:
    return SAMPLING_VARIANCE_REDUCING if algorithm == ALGO_KACZMARZ else SAMPLING_UNIFORM


def _distribution(entry: SolverEntry, ensemble: MeasurementEnsemble) -> SamplingDistribution:
    if (entry.sampling or _default_sampling(entry.algorithm)) == SAMPLING_VARIANCE_REDUCING:
        return variance_reducing_distribution(ensemble)
    return SamplingDistribution.uniform(ensemble.num_blocks)


def _resolve(entry: SolverEntry, ensemble: MeasurementEnsemble) -> _ResolvedRun:
    """Turn a config entry into a :class:`SolverConfig` for ``ensemble``."""

    if entry.algorithm == ALGO_KACZMARZ and not ensemble.is_row_partition:
        raise ConfigError(
            f"{entry.config_id}: Kaczmarz needs a dense ensemble with one row per block",
            path=("solver", "algo"),
        )
    if entry.algorithm == ALGO_PIE and not ensemble.is_stft:
        raise ConfigError(
            f"{entry.config_id}: PIE needs an STFT ensemble", path=("solver", "algo")
        )
    dist = _distribution(entry, ensemble)
    abc = abc_constants(ensemble, entry.k, dist) if entry.algorithm == ALGO_SAF else None
    if entry.mu is not None:
        base = entry.mu
    elif entry.algorithm == ALGO_PIE:
        base = entry.alpha0
    else:
        base = auto_step_size(
            entry.algorithm, ensemble, abc, entry.iters, decaying=entry.theta is not None
        )
    schedule: StepSchedule = (
        PolynomialSchedule(base, entry.theta) if entry.theta is not None else ConstantSchedule(base)
    )
    config = SolverConfig(
        eps=entry.eps,
        schedule=schedule,
        k=entry.k,
        dist=dist if entry.sampling is not None else None,
        max_iters=entry.iters,
        grad_tol=entry.grad_tol,
        trace_every=entry.trace_every,
    )
    return _ResolvedRun(entry=entry, config=config, dist=dist, abc=abc)


def _budget(
    run: _ResolvedRun,
    ensemble: MeasurementEnsemble,
    gamma: float,
    gap: float,
    c_sq: float,
) -> dict[str, Any] | None:
    schedule = run.config.schedule
    if isinstance(schedule, PolynomialSchedule):
        if run.entry.algorithm not in (ALGO_AF, ALGO_SAF):
            return None
        # c^2 is the observed weighted gradient sum over the run
        return {
            "iterations": corollary_budget_decaying(gamma, c_sq, schedule.mu, schedule.theta),
            "c_sq": c_sq,
            "gradient_bound": decaying_gradient_bound(
                c_sq, schedule.mu, schedule.theta, run.entry.iters
            ),
        }
    if run.entry.algorithm == ALGO_AF:
        return {"iterations": af_budget(gamma, gap, schedule.mu), "step_size": schedule.mu}
    if run.entry.algorithm == ALGO_SAF and run.abc is not None:
        return dataclasses.asdict(theorem_budget_constant(gamma, gap, run.abc, ensemble.norm))
    if run.entry.algorithm == ALGO_KACZMARZ:
        abc = abc_constants(ensemble, 1, variance_reducing_distribution(ensemble))
        report = theorem_budget_constant(
            gamma, gap, abc, ensemble.norm, mu=1.0 / ensemble.frobenius_norm**2
        )
        return dataclasses.asdict(report)
    return None


def _analyse(
    run: _ResolvedRun,
    ensemble: MeasurementEnsemble,
    curve: AggregateCurve,
    trace_set: TraceSet,
    plan: ExperimentPlan,
    gamma: float | None,
) -> dict[str, Any]:
    """Summary entry for one configuration: settings, final values and guarantees."""

    entry = run.entry
    schedule = run.config.schedule
    warnings: list[str] = []
    document: dict[str, Any] = {
        "algorithm": entry.algorithm,
        "eps": entry.eps,
        "k": entry.k,
        "iters": entry.iters,
        "sampling": entry.sampling or _default_sampling(entry.algorithm),
        "schedule": {
            "kind": "polynomial" if isinstance(schedule, PolynomialSchedule) else "constant",
            "mu": schedule.mu,
            "theta": schedule.theta if isinstance(schedule, PolynomialSchedule) else None,
        },
        "mu_auto": entry.mu is None,
    }
    if curve.t.size:
        document["final"] = {
            "mean_loss": float(curve.mean_loss[-1]),
            "mean_grad_norm": float(curve.mean_grad_norm[-1]),
            "min_mean_grad_norm": float(curve.min_mean_grad_norm[-1]),
        }

    beta = run.abc.beta if run.abc is not None else 0.0
    if entry.algorithm in (ALGO_AF, ALGO_SAF):
        conditions = step_condition_report(schedule, beta, ensemble.norm)
        document["step_conditions"] = dataclasses.asdict(conditions)
        if entry.algorithm == ALGO_AF and schedule.mu * ensemble.norm**2 > 1.0 + 1e-12:
            warnings.append("AF step exceeds 1/||A||^2; descent is not guaranteed")
        if entry.algorithm == ALGO_SAF and not conditions.beta_condition:
            warnings.append("SAF step violates beta ||A||^2 mu_t <= 1")
    if entry.algorithm == ALGO_PIE:
        if isinstance(schedule, ConstantSchedule):
            warnings.append(
                "constant alpha: classical practice without the decaying-step guarantee"
            )
        document["equivalent_saf_step"] = pie_equivalent_saf_step(ensemble, schedule.mu)

    traces = trace_set.config_traces(entry.config_id)
    if entry.algorithm == ALGO_AF and isinstance(schedule, ConstantSchedule) and traces:
        descent = check_descent(traces[0], schedule.mu, ensemble.norm)
        document["descent"] = {
            "checked": descent.checked,
            "stride": descent.stride,
            "violations": len(descent.violations),
            "in_hypothesis": descent.in_hypothesis,
            "passed": descent.passed,
        }
    if isinstance(schedule, PolynomialSchedule) and curve.t.size >= MIN_RATE_POINTS:
        rate = fit_rate(curve.min_mean_grad_norm, schedule, curve.t)
        document["rate"] = {
            "slope": rate.slope,
            "threshold": rate.threshold,
            "converged": rate.converged,
            "passed": rate.passed(_RATE_MARGIN),
        }
    if curve.t.size >= 2:
        document["weighted_sum"] = dataclasses.asdict(check_weighted_sum(curve))
    if entry.algorithm == ALGO_KACZMARZ:
        residual = kaczmarz_nulling_residual(
            ensemble,
            plan.start_point(0),
            min(entry.iters, _NULLING_STEPS),
            SeededRng(plan.base_seed, CHECK_STREAM_TAG),
        )
        document["kaczmarz_nulling"] = {
            "max_scaled_residual": residual,
            "passed": residual <= KACZMARZ_NULL_TOL,
        }
    if gamma is not None and curve.t.size:
        document["budget"] = _budget(
            run,
            ensemble,
            gamma,
            float(curve.mean_loss[0]),
            float(curve.cum_weighted_sq[-1]),
        )

    for warning in warnings:
        _LOGGER.warning("%s: %s", entry.config_id, warning)
    document["warnings"] = warnings
    return document


def _load_measured(cfg: CliConfig) -> MeasurementEnsemble:
    path = cfg.ensemble_path
    if not path.is_file():
        raise ConfigError(
            f"ensemble file {path} does not exist; run simulate first", path=("ensemble",)
        )
    ensemble = load_ensemble(path)
    if ensemble.measurements is None:
        raise ConfigError(f"ensemble file {path} holds no measurements", path=("ensemble",))
    return ensemble


def _run_entries(cfg: CliConfig, command: str, entries: Sequence[SolverEntry]) -> int:
    ensemble = _load_measured(cfg)
    resolved = [_resolve(entry, ensemble) for entry in entries]
    plan = ExperimentPlan(
        ensemble=ensemble,
        runs=tuple(
            PlannedRun(run.entry.config_id, run.entry.algorithm, run.config) for run in resolved
        ),
        trials=cfg.harness.trials,
        base_seed=cfg.harness.seed,
        init_scale=cfg.harness.init_scale,
    )
    trace_set = run_trials(plan, cfg.harness.workers)
    summary: dict[str, Any] = {
        "command": command,
        "ensemble": {**_ensemble_constants(ensemble), "path": str(cfg.ensemble_path)},
        "configs": {
            run.entry.config_id: _analyse(
                run,
                ensemble,
                trace_set.aggregates[run.entry.config_id],
                trace_set,
                plan,
                cfg.harness.gamma,
            )
            for run in resolved
        },
        "aborted": [
            {"config_id": config_id, "trial": trial, "error": error}
            for (config_id, trial), error in sorted(trace_set.errors.items())
        ],
    }
    written = export_trace_set(trace_set, cfg.output, summary)
    _write_manifest(cfg, command, written)
    if trace_set.errors:
        _LOGGER.error("%d trials aborted on non-finite iterates", len(trace_set.errors))
        return EXIT_NUMERICAL_ABORT
    return EXIT_OK


def cmd_solve(cfg: CliConfig) -> int:
    """Run the ``solver`` section on the configured ensemble."""

    return _run_entries(cfg, "solve", (cfg.solver,))


def cmd_sweep(cfg: CliConfig) -> int:
    """Run every entry of the ``solvers`` list on the configured ensemble."""

    return _run_entries(cfg, "sweep", cfg.solvers)


def cmd_check(cfg: CliConfig) -> int:
    """Run the self-check suite and write its report."""

    report = run_check_suite(cfg.check)
    path = cfg.output / CHECK_REPORT_FILENAME
    write_json(report.to_dict(), path)
    _write_manifest(cfg, "check", [path])
    for result in report.results:
        print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}")
    if not report.passed:
        print(f"failed checks: {', '.join(report.failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILURE
    return EXIT_OK


_COMMANDS: dict[str, Callable[[CliConfig], int]] = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return its exit code."""

    parser = _build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)

    try:
        overrides = {**_parse_overrides(args.set), **_flag_overrides(args)}
        cfg = load_cli_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error at {err.path_text}: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NumericalAbortError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL_ABORT
    except PhaseFlowError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
