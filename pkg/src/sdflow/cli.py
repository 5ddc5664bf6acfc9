"""Command-line interface definitions and argument parsing.

This module handles CLI argument parsing and command definitions. It
delegates the actual work to ``harness``, ``generator`` and ``targets``.
Entry points in ``entry_points.py`` call into this module.

Usage:
    # As entry point (configured in pyproject.toml)
    $ sdflow run --config grid.toml --adagrad --seed-noise 3
    $ sdflow table --target grid25 --trials 5 --workers 4 --output-dir out/grid
    $ sdflow targets export --name mystery30 --n 1024 --seed 0 --out mystery.csv

    # Programmatic
    from sdflow.cli import parse_args, run
    raise SystemExit(run(parse_args(["calibrate", "--target", "grid25"])))

Exit codes:
    0 on success, 2 for configuration or usage errors, 1 for any other
    sdflow error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from sdflow.errors import ConfigError, SDFlowError, UsageError

_logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Table conditions per target when --vary is not given.
DEFAULT_VARIED = {
    "grid25": ("adagrad", "batch", "const_noise", "anneal"),
    "mystery30": ("adagrad", "batch", "const_noise", "anneal", "offset"),
}
DEFAULT_METHODS = ("sd", "mmd", "svgd")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_override_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags mirroring every configuration field; unset flags leave the file value."""
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    group = parser.add_argument_group("configuration overrides")
    group.add_argument("--method", help="sd, mmd, mmd_normalized, svgd, analytic_sd, diffusion_step")
    group.add_argument("--rho", type=float, help="fixed convex step for diffusion_step")
    group.add_argument("--target", help="grid25, mystery30, swiss_roll, linear50")
    group.add_argument("--n-particles", dest="n_particles", type=int)
    group.add_argument("--iterations", type=int)
    group.add_argument("--batch-size", dest="batch_size", type=int)
    group.add_argument("--eta", type=float)
    group.add_argument("--output-dir", dest="output_dir", type=Path)
    group.add_argument(
        "--snapshot-steps", dest="snapshot_steps", type=_int_list, help="e.g. 0,100,500"
    )
    group.add_argument("--log-every", dest="log_every", type=int)
    for flag in ("adagrad", "batch", "anneal", "offset"):
        group.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    group.add_argument(
        "--const-noise", dest="const_noise", action=argparse.BooleanOptionalAction, default=None
    )
    group.add_argument("--sigma2-max", dest="sigma2_max", type=float)
    group.add_argument("--sigma2-min", dest="sigma2_min", type=float)
    group.add_argument("--seed-data", dest="seed_data", type=int)
    group.add_argument("--seed-noise", dest="seed_noise", type=int)
    group.add_argument("--seed-frequency", dest="seed_frequency", type=int)
    group.add_argument("--epsilon", type=float, help="AdaGrad fudge factor")
    group.add_argument("--n-frequencies", dest="n_frequencies", type=int)
    group.add_argument("--frequency-scale", dest="frequency_scale", type=float)
    group.add_argument("--calibration-trials", dest="calibration_trials", type=int)
    group.add_argument("--log-base", dest="log_base", choices=["e", "2", "10"])


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser.

    Returns:
        Configured ArgumentParser instance.
    """
    parser = argparse.ArgumentParser(
        prog="sdflow",
        description="Score-difference flow sampling experiments.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--version",
        action="store_true",
        help="Show version information and exit",
    )
    parser.add_argument("--verbose", action="store_true", help="Log progress (INFO)")
    parser.add_argument("--debug", action="store_true", help="Log everything (DEBUG)")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser("run", help="Run one particle experiment")
    _add_override_arguments(run_parser)

    table_parser = subparsers.add_parser("table", help="Run a condition table")
    _add_override_arguments(table_parser)
    table_parser.add_argument(
        "--methods", type=_name_list, default=list(DEFAULT_METHODS), help="comma-separated"
    )
    table_parser.add_argument(
        "--vary", type=_name_list, help="flags to enumerate (default depends on target)"
    )
    table_parser.add_argument("--trials", type=int, default=5)
    table_parser.add_argument("--workers", type=int, default=1)

    cal_parser = subparsers.add_parser("calibrate", help="Calibrate a CFD threshold")
    _add_override_arguments(cal_parser)
    cal_parser.add_argument("--workers", type=int, default=1)
    cal_parser.add_argument("--out", type=Path, help="write threshold.csv here")

    interp_parser = subparsers.add_parser("interpolate", help="Flow one data set into another")
    _add_override_arguments(interp_parser)
    interp_parser.add_argument("--source", default="swiss_roll")
    interp_parser.add_argument("--dest", default="mystery30")

    model_parser = subparsers.add_parser("model-opt", help="Train the linear generator")
    model_parser.add_argument("--steps", type=int)
    model_parser.add_argument("--batch", type=int)
    model_parser.add_argument("--eta", type=float)
    model_parser.add_argument("--lam", type=float, help="regression step (batch-mean)")
    model_parser.add_argument("--method")
    model_parser.add_argument("--noise-multiplier", dest="noise_multiplier", type=float)
    model_parser.add_argument(
        "--noise-applies-to", dest="noise_applies_to", choices=["variance", "std"]
    )
    model_parser.add_argument("--n-target", dest="n_target", type=int)
    model_parser.add_argument("--seed", type=int)
    model_parser.add_argument("--target-seed", dest="target_seed", type=int)
    model_parser.add_argument("--output-dir", dest="output_dir", type=Path)

    targets_parser = subparsers.add_parser("targets", help="Target distribution tools")
    targets_sub = targets_parser.add_subparsers(dest="targets_command")
    export_parser = targets_sub.add_parser("export", help="Write a target sample as CSV")
    export_parser.add_argument("--name", required=True)
    export_parser.add_argument("--n", type=int, default=1024)
    export_parser.add_argument("--seed", type=int, default=0)
    export_parser.add_argument("--out", type=Path, required=True)
    export_parser.add_argument("--spec-out", dest="spec_out", type=Path)
    export_parser.add_argument("--header", action="store_true", help="write an x0,x1,... header")

    return parser


def parse_args(args: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Args:
        args: Arguments to parse. If None, uses sys.argv.

    Returns:
        Parsed arguments namespace.
    """
    parser = create_parser()
    return parser.parse_args(args)


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    from sdflow.config import OVERRIDE_NAMES

    return {name: getattr(args, name) for name in OVERRIDE_NAMES if hasattr(args, name)}


def _experiment_config(args: argparse.Namespace, default_target: str | None = None) -> Any:
    from sdflow.config import apply_overrides, base_config_for, load_config

    overrides = _overrides(args)
    if overrides.get("target") is None:
        overrides["target"] = default_target
    if args.config is not None:
        return load_config(args.config, overrides)
    return apply_overrides(base_config_for(overrides.get("target")), overrides)


def _cmd_run(args: argparse.Namespace) -> int:
    from sdflow.harness import run_particle_experiment

    config = _experiment_config(args)
    record = run_particle_experiment(config)
    v = record.verdict
    print(  # noqa: T201
        f"{config.method.name} on {config.target}: min CFD {v.min_cfd:.6f} at step "
        f"{v.step_of_min} (threshold {v.threshold:.6f}) -> "
        f"{'converged' if v.converged else 'not converged'}"
    )
    return 0


def _cmd_table(args: argparse.Namespace) -> int:
    from sdflow.flows import FlowMethod
    from sdflow.harness import condition_grid, run_condition_table

    config = _experiment_config(args)
    varied = args.vary or DEFAULT_VARIED.get(config.target, DEFAULT_VARIED["mystery30"])
    try:
        methods = [FlowMethod.parse(name) for name in args.methods]
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc
    table = run_condition_table(
        config,
        condition_grid(varied, config.flags),
        methods,
        args.trials,
        workers=args.workers,
        output_dir=config.output_dir,
    )
    names = [m.name for m in methods]
    print("  ".join([*varied, *names]))  # noqa: T201
    for cond, row in zip(table.conditions, table.cells, strict=True):
        flags = cond.as_dict()
        marks = ["Y" if flags[name] else "N" for name in varied]
        print("  ".join([*marks, *(cell.mark for cell in row)]))  # noqa: T201
    print(f"threshold {table.threshold:.6f}")  # noqa: T201
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    from sdflow._io import write_csv_rows
    from sdflow.harness import measurement_for, resolve_target

    config = _experiment_config(args)
    target = resolve_target(config.target)
    meas = measurement_for(config, target, workers=args.workers)
    print(f"{target.name}: threshold {meas.threshold:.6f}")  # noqa: T201
    if args.out is not None:
        write_csv_rows(
            Path(args.out) / "threshold.csv",
            ["target", "n", "trials", "n_frequencies", "threshold"],
            [[target.name, config.n_particles, config.calibration_trials, config.n_frequencies, meas.threshold]],
        )
    return 0


def _cmd_interpolate(args: argparse.Namespace) -> int:
    from dataclasses import replace

    from sdflow.harness import resolve_target, run_interpolation

    source = resolve_target(args.source)
    dest = resolve_target(args.dest)
    config = replace(_experiment_config(args, default_target=dest.name), target=dest.name)
    result = run_interpolation(source, dest, config.n_particles, config)
    v = result.record.verdict
    print(  # noqa: T201
        f"{source.name} -> {dest.name}: final CFD {result.record.rows[-1]['cfd']:.6f}, "
        f"min CFD {v.min_cfd:.6f} (threshold {v.threshold:.6f})"
    )
    return 0


def _cmd_model_opt(args: argparse.Namespace) -> int:
    from dataclasses import replace

    from sdflow.generator import ModelOptSettings, run_model_optimization, write_model_outputs

    fields = (
        "steps",
        "batch",
        "eta",
        "lam",
        "method",
        "noise_multiplier",
        "noise_applies_to",
        "n_target",
        "seed",
        "target_seed",
    )
    changes = {name: getattr(args, name) for name in fields if getattr(args, name) is not None}
    settings = replace(ModelOptSettings(), **changes)
    result = run_model_optimization(settings)
    report = result.report
    print(  # noqa: T201
        f"sigma2 {result.sigma2:.2f}; relative mean error {report.relative_mean_error:.4f}; "
        f"covariance correlation {report.covariance_correlation:.4f}; "
        f"overfit ratio {report.overfit_ratio:.3f}"
    )
    if args.output_dir is not None:
        write_model_outputs(args.output_dir, result)
    return 0


def _cmd_targets(args: argparse.Namespace) -> int:
    from sdflow.kernel_core import write_particles_csv
    from sdflow.targets import get_target, write_spec_text

    if args.targets_command != "export":
        sys.stderr.write("error: targets needs a subcommand (export)\n")
        return 2
    target = get_target(args.name)
    write_particles_csv(args.out, target.sample(args.n, args.seed), header=args.header)
    if args.spec_out is not None:
        write_spec_text(args.spec_out, target)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "table": _cmd_table,
    "calibrate": _cmd_calibrate,
    "interpolate": _cmd_interpolate,
    "model-opt": _cmd_model_opt,
    "targets": _cmd_targets,
}


def run(args: argparse.Namespace) -> int:
    """Execute the CLI based on parsed arguments.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success, non-zero for errors).
    """
    if args.version:
        from sdflow.environment import get_version_info

        info = get_version_info()
        print(f"sdflow {info['package_version']}")  # noqa: T201
        print(f"Python {info['python_full']}")  # noqa: T201
        return 0

    configure_logging(args)
    handler = _COMMANDS.get(args.command)
    if handler is None:
        # No command specified - show help
        create_parser().print_help()
        return 0

    try:
        return handler(args)
    except (ConfigError, UsageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except SDFlowError as exc:
        sys.stderr.write(f"error: {exc}\n")
        _logger.debug("command %s failed", args.command, exc_info=True)
        return 1
