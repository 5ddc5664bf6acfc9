"""Load experiment configurations from TOML files.

A file has the sections ``[experiment]``, ``[flags]``, ``[cosine]``,
``[seeds]``, ``[optimizer]``, ``[metrics]`` and ``[bandwidth]``; every key
is optional. Values start from the preset of the chosen target (when one
exists) or from the :class:`~sdflow.harness.ExperimentConfig` defaults.

Example file::

    [experiment]
    method = "sd"
    target = "grid25"
    iterations = 1000

    [flags]
    adagrad = true
    batch = false

    [seeds]
    noise = 7

Internally every key maps to one flat override name (``seeds.noise`` is
``seed_noise``), which is also what CLI flags produce.
"""

from __future__ import annotations

import logging
import tomllib
from collections.abc import Mapping
from dataclasses import replace
from pathlib import Path
from typing import Any

from sdflow.errors import ConfigError, UsageError
from sdflow.flows import FlowKind, FlowMethod
from sdflow.harness import FLAG_NAMES, ExperimentConfig

_logger = logging.getLogger(__name__)

# section -> key -> (flat name, expected type)
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "experiment": {
        "method": ("method", str),
        "rho": ("rho", float),
        "target": ("target", str),
        "n_particles": ("n_particles", int),
        "iterations": ("iterations", int),
        "batch_size": ("batch_size", int),
        "eta": ("eta", float),
        "output_dir": ("output_dir", str),
        "snapshot_steps": ("snapshot_steps", list),
        "log_every": ("log_every", int),
    },
    "flags": {name: (name, bool) for name in FLAG_NAMES},
    "cosine": {
        "sigma2_max": ("sigma2_max", float),
        "sigma2_min": ("sigma2_min", float),
    },
    "seeds": {
        "data": ("seed_data", int),
        "noise": ("seed_noise", int),
        "frequency": ("seed_frequency", int),
    },
    "optimizer": {"epsilon": ("epsilon", float)},
    "metrics": {
        "n_frequencies": ("n_frequencies", int),
        "frequency_scale": ("frequency_scale", float),
        "calibration_trials": ("calibration_trials", int),
    },
    "bandwidth": {"log_base": ("log_base", str)},
}

OVERRIDE_NAMES = frozenset(flat for keys in _SCHEMA.values() for flat, _ in keys.values())

_PLAIN_FIELDS = (
    "target",
    "n_particles",
    "iterations",
    "batch_size",
    "eta",
    "sigma2_max",
    "sigma2_min",
    "epsilon",
    "n_frequencies",
    "frequency_scale",
    "calibration_trials",
    "log_base",
    "log_every",
)


def _check_type(where: str, value: Any, expected: type) -> Any:
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got a boolean")
    if expected is list:
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where}: expected a list of integers")
        return tuple(value)
    if not isinstance(value, expected):
        raise ConfigError(f"{where}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def flatten_document(doc: Mapping[str, Any]) -> dict[str, Any]:
    """Validate a parsed TOML document and map it onto flat override names.

    Raises:
        ConfigError: For unknown sections or keys and wrong value types.
    """
    flat: dict[str, Any] = {}
    for section, body in doc.items():
        keys = _SCHEMA.get(section)
        if keys is None:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name, expected = keys[key]
            flat[name] = _check_type(f"[{section}] {key}", value, expected)
    return flat


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """Return ``config`` with flat overrides applied; ``None`` values are skipped.

    Raises:
        ConfigError: For unknown names or values the configuration rejects.
    """
    values = {k: v for k, v in overrides.items() if v is not None}
    unknown = sorted(set(values) - OVERRIDE_NAMES)
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(unknown)}")

    changes: dict[str, Any] = {k: values[k] for k in _PLAIN_FIELDS if k in values}
    if "output_dir" in values:
        changes["output_dir"] = Path(values["output_dir"])
    if "snapshot_steps" in values:
        changes["snapshot_steps"] = tuple(sorted(set(values["snapshot_steps"])))

    try:
        if "method" in values or "rho" in values:
            kind = FlowMethod.parse(values["method"]).kind if "method" in values else config.method.kind
            rho = values.get("rho", config.method.rho if kind is FlowKind.DIFFUSION_STEP else None)
            changes["method"] = FlowMethod(kind, rho)
        flag_changes = {k: bool(values[k]) for k in FLAG_NAMES if k in values}
        if flag_changes:
            changes["flags"] = replace(config.flags, **flag_changes)
        seed_changes = {
            part: int(values[f"seed_{part}"])
            for part in ("data", "noise", "frequency")
            if f"seed_{part}" in values
        }
        if seed_changes:
            changes["seeds"] = replace(config.seeds, **seed_changes)
        return replace(config, **changes)
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc


def base_config_for(target: str | None) -> ExperimentConfig:
    """Preset for ``target`` when there is one, else the defaults."""
    if target is None:
        return ExperimentConfig()
    try:
        return ExperimentConfig.for_target(target)
    except ConfigError:
        return ExperimentConfig(target=target)


def config_from_mapping(
    doc: Mapping[str, Any], overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """Build a configuration from a parsed document plus flat overrides."""
    flat = flatten_document(doc)
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return apply_overrides(base_config_for(flat.get("target")), flat)


def load_config(path: Path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a TOML configuration file.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid.
    """
    file = Path(path)
    try:
        with file.open("rb") as handle:
            doc = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {file}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{file}: {exc}") from exc
    config = config_from_mapping(doc, overrides)
    _logger.info("loaded config %s: %s on %s", file, config.method.name, config.target)
    return config
