"""Configuration schema and loader for the ``phaseflow`` command line."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol

from .checks import FAULTS, CheckOptions
from .const import (
    ALGO_SAF,
    ALGORITHMS,
    CONF_CHECK,
    CONF_ENSEMBLE,
    CONF_HARNESS,
    CONF_INSTANCE,
    CONF_OUTPUT,
    CONF_SOLVER,
    CONF_SOLVERS,
    DEFAULT_ALPHA0,
    DEFAULT_CHECK_RESAMPLES,
    DEFAULT_INIT_SCALE,
    DEFAULT_ITERS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    DEFAULT_WORKERS,
    ENSEMBLE_FILENAME,
    INSTANCE_DENSE,
    INSTANCE_STFT,
    NOISE_GAUSSIAN,
    NOISE_NONE,
    NOISE_POISSON,
    SAMPLING_UNIFORM,
    SAMPLING_VARIANCE_REDUCING,
    WINDOW_GAUSSIAN,
    WINDOW_KINDS,
)
from .errors import ConfigError, PhaseFlowError
from .harness import InstanceSpec
from .measurement import NoiseSpec

_LOGGER = logging.getLogger(__name__)

MU_AUTO = "auto"

_SEED = vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1))
_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NONNEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
_THETA = vol.All(
    vol.Coerce(float), vol.Range(min=0, max=0.5, min_included=False, max_included=False)
)

NOISE_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=NOISE_NONE): vol.In(
            [NOISE_NONE, NOISE_GAUSSIAN, NOISE_POISSON]
        ),
        vol.Optional("sigma", default=0.0): _NONNEGATIVE_FLOAT,
        vol.Optional("scale", default=1.0): _POSITIVE_FLOAT,
        vol.Optional("seed", default=DEFAULT_SEED): _SEED,
    }
)

INSTANCE_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=INSTANCE_STFT): vol.In([INSTANCE_STFT, INSTANCE_DENSE]),
        vol.Optional("d", default=16): _POSITIVE_INT,
        vol.Optional("num_blocks", default=4): _POSITIVE_INT,
        vol.Optional("shifts", default=None): vol.Any(None, [vol.Coerce(int)]),
        vol.Optional("window", default=WINDOW_GAUSSIAN): vol.In(WINDOW_KINDS),
        vol.Optional("window_width", default=3.0): _POSITIVE_FLOAT,
        vol.Optional("rows", default=32): _POSITIVE_INT,
        vol.Optional("rows_per_block", default=1): _POSITIVE_INT,
        vol.Optional("noise", default=dict): NOISE_SCHEMA,
        vol.Optional("seed", default=DEFAULT_SEED): _SEED,
    }
)

SOLVER_SCHEMA = vol.Schema(
    {
        vol.Optional("id", default=None): vol.Any(None, vol.All(str, vol.Match(r"^[\w.-]+$"))),
        vol.Optional("algo", default=ALGO_SAF): vol.In(ALGORITHMS),
        vol.Optional("eps", default=0.0): _NONNEGATIVE_FLOAT,
        vol.Optional("mu", default=MU_AUTO): vol.Any(MU_AUTO, _POSITIVE_FLOAT),
        vol.Optional("theta", default=None): vol.Any(None, _THETA),
        vol.Optional("alpha0", default=DEFAULT_ALPHA0): _POSITIVE_FLOAT,
        vol.Optional("iters", default=DEFAULT_ITERS): _POSITIVE_INT,
        vol.Optional("k", default=1): _POSITIVE_INT,
        vol.Optional("sampling", default=None): vol.Any(
            None, vol.In([SAMPLING_UNIFORM, SAMPLING_VARIANCE_REDUCING])
        ),
        vol.Optional("grad_tol", default=0.0): _NONNEGATIVE_FLOAT,
        vol.Optional("trace_every", default=1): _POSITIVE_INT,
    }
)

HARNESS_SCHEMA = vol.Schema(
    {
        vol.Optional("trials", default=DEFAULT_TRIALS): _POSITIVE_INT,
        vol.Optional("seed", default=DEFAULT_SEED): _SEED,
        vol.Optional("workers", default=DEFAULT_WORKERS): _POSITIVE_INT,
        vol.Optional("init_scale", default=DEFAULT_INIT_SCALE): _POSITIVE_FLOAT,
        vol.Optional("gamma", default=None): vol.Any(None, _POSITIVE_FLOAT),
    }
)

CHECK_SCHEMA = vol.Schema(
    {
        vol.Optional("eps", default=None): vol.Any(None, _NONNEGATIVE_FLOAT),
        vol.Optional("fd", default=False): bool,
        vol.Optional("fault", default=None): vol.Any(None, vol.In(FAULTS)),
        vol.Optional("resamples", default=DEFAULT_CHECK_RESAMPLES): _POSITIVE_INT,
        vol.Optional("seed", default=DEFAULT_SEED): _SEED,
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_INSTANCE, default=dict): INSTANCE_SCHEMA,
        vol.Optional(CONF_SOLVER, default=dict): SOLVER_SCHEMA,
        vol.Optional(CONF_SOLVERS, default=list): [SOLVER_SCHEMA],
        vol.Optional(CONF_HARNESS, default=dict): HARNESS_SCHEMA,
        vol.Optional(CONF_CHECK, default=dict): CHECK_SCHEMA,
        vol.Optional(CONF_OUTPUT, default=DEFAULT_OUTPUT_DIR): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_ENSEMBLE, default=None): vol.Any(None, vol.All(str, vol.Length(min=1))),
    }
)


@dataclass(frozen=True, slots=True)
class SolverEntry:
    """One solver configuration before the ensemble-dependent step size is resolved.

    ``mu`` of ``None`` stands for ``auto``. A ``theta`` selects the decaying schedule
    ``mu / (1 + t)^(1/2 + theta)``; without it the step is constant.
    """

    config_id: str
    algorithm: str
    eps: float
    mu: float | None
    theta: float | None
    alpha0: float
    iters: int
    k: int
    sampling: str | None
    grad_tol: float
    trace_every: int

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], index: int | None = None) -> SolverEntry:
        algorithm = data["algo"]
        default_id = algorithm if index is None else f"{index:02d}-{algorithm}"
        mu = data["mu"]
        return cls(
            config_id=data["id"] or default_id,
            algorithm=algorithm,
            eps=data["eps"],
            mu=None if mu == MU_AUTO else float(mu),
            theta=data["theta"],
            alpha0=data["alpha0"],
            iters=data["iters"],
            k=data["k"],
            sampling=data["sampling"],
            grad_tol=data["grad_tol"],
            trace_every=data["trace_every"],
        )


@dataclass(frozen=True, slots=True)
class HarnessOptions:
    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    workers: int = DEFAULT_WORKERS
    init_scale: float = DEFAULT_INIT_SCALE
    gamma: float | None = None


@dataclass(frozen=True, slots=True)
class CliConfig:
    """Validated command-line configuration."""

    instance: InstanceSpec
    solver: SolverEntry
    solvers: tuple[SolverEntry, ...]
    harness: HarnessOptions
    check: CheckOptions
    output: Path
    ensemble: Path | None
    raw: dict[str, Any] = field(repr=False, compare=False)

    @property
    def ensemble_path(self) -> Path:
        return self.ensemble if self.ensemble is not None else self.output / ENSEMBLE_FILENAME

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: Mapping[str, Any]) -> str:
    """Return the sha256 of the canonical JSON form of a validated configuration."""

    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _descend(container: Any, part: str, path: list[str]) -> Any:
    if isinstance(container, list):
        if not part.isdigit() or int(part) >= len(container):
            raise ConfigError(f"no list entry {part!r}", path=path)
        return container[int(part)]
    if isinstance(container, dict):
        return container.setdefault(part, {})
    raise ConfigError(f"{'.'.join(path[:-1])} is not a section", path=path)


def apply_overrides(raw: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Return a copy of ``raw`` with dotted overrides such as ``solvers.0.iters`` applied."""

    merged: dict[str, Any] = json.loads(json.dumps(raw))
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if not all(parts):
            raise ConfigError(f"invalid override key {dotted!r}", path=parts)
        target: Any = merged
        for depth, part in enumerate(parts[:-1]):
            target = _descend(target, part, parts[: depth + 1])
        if isinstance(target, list):
            _descend(target, parts[-1], parts)
            target[int(parts[-1])] = value
        elif isinstance(target, dict):
            target[parts[-1]] = value
        else:
            raise ConfigError(f"{'.'.join(parts[:-1])} is not a section", path=parts)
    return merged


def read_config(path: Path) -> dict[str, Any]:
    """Load the raw JSON object stored at ``path``."""

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise ConfigError(f"config file {path} does not exist") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def validate_config(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Validate ``raw`` against :data:`CONFIG_SCHEMA` and fill in defaults."""

    try:
        validated: dict[str, Any] = CONFIG_SCHEMA(dict(raw))
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        path = tuple(first.path)
        location = ".".join(str(part) for part in path) or "<root>"
        raise ConfigError(f"invalid config at {location}: {first.msg}", path=path) from err
    return validated


def _instance(data: Mapping[str, Any]) -> InstanceSpec:
    noise = data["noise"]
    shifts = data["shifts"]
    return InstanceSpec(
        kind=data["kind"],
        d=data["d"],
        num_blocks=len(shifts) if shifts is not None else data["num_blocks"],
        shifts=tuple(shifts) if shifts is not None else None,
        window=data["window"],
        window_width=data["window_width"],
        rows=data["rows"],
        rows_per_block=data["rows_per_block"],
        noise=NoiseSpec(
            kind=noise["kind"], sigma=noise["sigma"], scale=noise["scale"], seed=noise["seed"]
        ),
        seed=data["seed"],
    )


def load_cli_config(
    path: Path | None,
    overrides: Mapping[str, Any] | None = None,
) -> CliConfig:
    """Read ``path`` (or start empty), apply ``overrides`` and validate the result."""

    raw = read_config(path) if path is not None else {}
    merged = apply_overrides(raw, overrides or {})
    validated = validate_config(merged)

    solver = SolverEntry.from_dict(validated[CONF_SOLVER])
    solvers = tuple(
        SolverEntry.from_dict(entry, index) for index, entry in enumerate(validated[CONF_SOLVERS])
    ) or (solver,)
    ids = [entry.config_id for entry in solvers]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"solver ids must be unique, got {ids}", path=(CONF_SOLVERS,))

    try:
        instance = _instance(validated[CONF_INSTANCE])
    except PhaseFlowError as err:
        raise ConfigError(f"invalid instance: {err}", path=(CONF_INSTANCE,)) from err
    check = validated[CONF_CHECK]
    cli_config = CliConfig(
        instance=instance,
        solver=solver,
        solvers=solvers,
        harness=HarnessOptions(**validated[CONF_HARNESS]),
        check=CheckOptions(
            eps=check["eps"],
            fd_only=check["fd"],
            seed=check["seed"],
            resamples=check["resamples"],
            fault=check["fault"],
        ),
        output=Path(validated[CONF_OUTPUT]),
        ensemble=Path(validated[CONF_ENSEMBLE]) if validated[CONF_ENSEMBLE] else None,
        raw=validated,
    )
    _LOGGER.debug("Loaded config %s (hash %s)", path, cli_config.config_hash[:12])
    return cli_config
