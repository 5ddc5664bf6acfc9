"""Experiment orchestration: particle runs, condition tables and interpolation.

This module is interface-agnostic; ``cli.py`` builds configurations and
calls into it. Every run is deterministic given the seeds in its
:class:`ExperimentConfig`.

Per-iteration loop (particle optimization):
    1. measure CFD of the full clean particle set against the fixed target
       sample,
    2. pick the target/source batches (all points unless ``batch``),
    3. evaluate the flow at ``z = y + sigma eps`` (``anneal``) or ``z = y``,
    4. move the particles with SGD or AdaGrad.
"""

from __future__ import annotations

import itertools
import logging
import time
from collections.abc import Sequence
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NotRequired, TypedDict

import numpy as np

from sdflow._io import write_csv_rows
from sdflow.errors import ConfigError, SDFlowError, UsageError
from sdflow.flows import FlowKind, FlowMethod, denoiser_gap, flow_direction
from sdflow.kernel_core import LOG_BASES, ParticleSet, median_bandwidth, write_particles_csv
from sdflow.metrics import (
    ConvergenceVerdict,
    FrequencySet,
    calibrate_threshold,
    cf_distance,
    draw_frequencies,
    empirical_cf,
    verdict_from_trace,
)
from sdflow.optimizers import DEFAULT_EPSILON, OptimizerState, apply_step
from sdflow.schedules import ScheduleSpec, noise_at, step_at
from sdflow.seeding import derive_seed, make_rng
from sdflow.targets import (
    TargetModel,
    fitted_gaussian_score,
    get_target,
    offset_gaussian_base,
)

_logger = logging.getLogger(__name__)

FLAG_NAMES = ("adagrad", "batch", "const_noise", "anneal", "offset")

# seed streams under seeds.data / seeds.frequency
_STREAM_TARGET = 0
_STREAM_BASE = 1
_STREAM_CALIBRATION = 1


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionFlags:
    """One experimental condition.

    Attributes:
        adagrad: Move particles with AdaGrad instead of plain steps.
        batch: Subsample target and source every iteration.
        const_noise: Freeze sigma2 at the median bandwidth of the base.
        anneal: Evaluate the flow at noise-injected particles.
        offset: Start the base away from the target mean.
    """

    adagrad: bool = False
    batch: bool = False
    const_noise: bool = False
    anneal: bool = True
    offset: bool = False

    def as_dict(self) -> dict[str, bool]:
        return {name: bool(getattr(self, name)) for name in FLAG_NAMES}

    @property
    def label(self) -> str:
        return ",".join(f"{name}={'Y' if value else 'N'}" for name, value in self.as_dict().items())


def condition_grid(
    varied: Sequence[str], base: ConditionFlags | None = None
) -> list[ConditionFlags]:
    """All ``2**len(varied)`` combinations of the named flags, others from ``base``.

    The first named flag varies slowest, each flag going N then Y.

    Raises:
        ConfigError: For unknown or repeated flag names.
    """
    base = base or ConditionFlags()
    unknown = [name for name in varied if name not in FLAG_NAMES]
    if unknown or len(set(varied)) != len(varied):
        raise ConfigError(f"bad condition flags {list(varied)} (known: {', '.join(FLAG_NAMES)})")
    return [
        replace(base, **dict(zip(varied, values, strict=True)))
        for values in itertools.product((False, True), repeat=len(varied))
    ]


@dataclass(frozen=True)
class Seeds:
    """Explicit seeds: data (target pool, base), noise (batches, eps), frequency."""

    data: int = 0
    noise: int = 1
    frequency: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a particle-optimization run depends on.

    Raises:
        ConfigError: From ``__post_init__`` when a field is out of range.
    """

    method: FlowMethod = field(default_factory=lambda: FlowMethod(FlowKind.KERNEL_SD))
    target: str = "grid25"
    n_particles: int = 1024
    iterations: int = 1000
    batch_size: int = 128
    eta: float = 0.1
    flags: ConditionFlags = field(default_factory=ConditionFlags)
    sigma2_max: float = 10.0
    sigma2_min: float = 0.5
    seeds: Seeds = field(default_factory=Seeds)
    epsilon: float = DEFAULT_EPSILON
    n_frequencies: int = 256
    frequency_scale: float = 1.0
    calibration_trials: int = 1000
    log_base: str = "e"
    output_dir: Path | None = None
    snapshot_steps: tuple[int, ...] = ()
    log_every: int = 100

    def __post_init__(self) -> None:
        problems: list[str] = []
        if self.n_particles < 1:
            problems.append("n_particles must be >= 1")
        if self.iterations < 1:
            problems.append("iterations must be >= 1")
        if not 1 <= self.batch_size <= self.n_particles:
            problems.append(f"batch_size must lie in [1, n_particles={self.n_particles}]")
        if not self.eta > 0.0:
            problems.append("eta must be positive")
        if not 0.0 < self.sigma2_min <= self.sigma2_max:
            problems.append("cosine schedule needs 0 < sigma2_min <= sigma2_max")
        if not self.epsilon > 0.0:
            problems.append("epsilon must be positive")
        if self.n_frequencies < 1 or self.calibration_trials < 1:
            problems.append("n_frequencies and calibration_trials must be >= 1")
        if not self.frequency_scale > 0.0:
            problems.append("frequency_scale must be positive")
        if self.log_base not in LOG_BASES:
            problems.append(f"log_base must be one of {sorted(LOG_BASES)}")
        if self.flags.const_noise and self.n_particles < 2:
            problems.append("const_noise needs n_particles >= 2")
        bad_snaps = [s for s in self.snapshot_steps if not 0 <= s <= self.iterations]
        if bad_snaps:
            problems.append(f"snapshot steps outside [0, {self.iterations}]: {bad_snaps}")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def for_target(cls, name: str, **overrides: object) -> ExperimentConfig:
        """Benchmark settings for ``grid25`` (cosine 10 -> 0.5, offset base) or ``mystery30`` (4 -> 0.5)."""
        presets: dict[str, dict[str, object]] = {
            "grid25": {"sigma2_max": 10.0, "sigma2_min": 0.5, "flags": ConditionFlags(offset=True)},
            "mystery30": {"sigma2_max": 4.0, "sigma2_min": 0.5},
        }
        if name not in presets:
            raise ConfigError(f"no preset for target {name!r} (have: {', '.join(presets)})")
        values: dict[str, object] = {"target": name, **presets[name], **overrides}
        return cls(**values)  # type: ignore[arg-type]

    def schedule_for(self, base: ParticleSet) -> ScheduleSpec:
        """Constant median-bandwidth schedule under ``const_noise``, else cosine."""
        if self.flags.const_noise:
            sigma2 = median_bandwidth(base, log_base=self.log_base)
            _logger.info("constant noise: median bandwidth sigma2=%.6g", sigma2)
            return ScheduleSpec.constant(sigma2, self.eta, self.iterations)
        return ScheduleSpec.cosine(self.sigma2_max, self.sigma2_min, self.eta, self.iterations)


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


class TrajectoryRow(TypedDict):
    step: int
    cfd: float
    sigma2: float
    eta: float
    mean_displacement: float
    denoiser_gap: NotRequired[float]


TRAJECTORY_COLUMNS = ("step", "cfd", "sigma2", "eta", "mean_displacement")


@dataclass
class RunRecord:
    """Outcome of one particle run; ``wall_time`` is never written to CSV."""

    config: ExperimentConfig
    rows: list[TrajectoryRow]
    verdict: ConvergenceVerdict
    final_particles: ParticleSet
    snapshots: dict[int, ParticleSet] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def cfds(self) -> list[float]:
        return [row["cfd"] for row in self.rows]


@dataclass(frozen=True)
class Measurement:
    """Frequencies and threshold shared by every run in a comparison."""

    freqs: FrequencySet
    threshold: float


def measurement_for(
    config: ExperimentConfig, target: TargetModel, *, workers: int = 1
) -> Measurement:
    """Draw the frequency set and calibrate the threshold for ``target``."""
    freqs = draw_frequencies(
        target.dim, config.n_frequencies, config.seeds.frequency, config.frequency_scale
    )
    threshold = calibrate_threshold(
        target,
        config.n_particles,
        config.calibration_trials,
        freqs,
        derive_seed(config.seeds.frequency, _STREAM_CALIBRATION),
        workers=workers,
    )
    return Measurement(freqs, threshold)


def target_pool(config: ExperimentConfig, target: TargetModel) -> ParticleSet:
    """The fixed full-size target sample a run measures against and batches from."""
    return target.sample(config.n_particles, derive_seed(config.seeds.data, _STREAM_TARGET))


def resolve_target(name: str) -> TargetModel:
    """Registry lookup that reports unknown names as configuration errors."""
    try:
        return get_target(name)
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc


def _check_method(config: ExperimentConfig, target: TargetModel) -> None:
    if config.method.needs_target_score and not target.has_score:
        raise ConfigError(
            f"{config.method.name} needs an analytic score but target {target.name} has none"
        )


# ---------------------------------------------------------------------------
# Particle optimization
# ---------------------------------------------------------------------------


def run_particle_experiment(
    config: ExperimentConfig,
    *,
    measurement: Measurement | None = None,
    target_model: TargetModel | None = None,
    initial: ParticleSet | None = None,
) -> RunRecord:
    """Run the particle-optimization loop.

    Args:
        config: Run configuration.
        measurement: Shared frequencies and threshold; computed from
            ``config`` when omitted.
        target_model: Target to use instead of ``get_target(config.target)``.
        initial: Starting particles instead of the (offset) Gaussian base.

    Returns:
        The per-step trace, verdict and final particles.

    Raises:
        ConfigError: If the configuration cannot run on this target; raised
            before any computation.
    """
    target = target_model or resolve_target(config.target)
    _check_method(config, target)
    if initial is not None and (initial.dim != target.dim or initial.count != config.n_particles):
        raise ConfigError(
            f"initial particles {initial.points.shape} do not match "
            f"n_particles={config.n_particles}, dim={target.dim}"
        )

    started = time.perf_counter()
    meas = measurement or measurement_for(config, target)
    pool = target_pool(config, target)
    if initial is None:
        initial = offset_gaussian_base(
            target,
            config.flags.offset,
            config.n_particles,
            derive_seed(config.seeds.data, _STREAM_BASE),
        )
    particles = initial
    schedule = config.schedule_for(particles)
    state = OptimizerState.create(config.flags.adagrad, config.epsilon)
    reference_cf = empirical_cf(pool, meas.freqs)
    method = config.method
    n = config.n_particles
    flags = config.flags

    rows: list[TrajectoryRow] = []
    snapshots: dict[int, ParticleSet] = {}
    for step in range(config.iterations):
        if step in config.snapshot_steps:
            snapshots[step] = particles
        cfd_value = cf_distance(empirical_cf(particles, meas.freqs), reference_cf)
        sigma2 = noise_at(schedule, step)
        eta = method.rho if method.rho is not None else step_at(schedule, step)

        rng = make_rng(config.seeds.noise, step)
        if flags.batch:
            source_idx = rng.choice(n, size=config.batch_size, replace=False)
            target_idx = rng.choice(n, size=config.batch_size, replace=False)
        else:
            source_idx = target_idx = np.arange(n)
        y = particles.points[source_idx]
        x = pool.points[target_idx]
        eps = rng.standard_normal(y.shape)
        z = y + np.sqrt(sigma2) * eps if flags.anneal else y

        score_q = fitted_gaussian_score(y) if method.kind is FlowKind.ANALYTIC_SD else None
        direction = flow_direction(
            method, z=z, source=y, target=x, sigma2=sigma2, score_p=target.score, score_q=score_q
        )
        if flags.batch:
            full = np.zeros_like(particles.points)
            full[source_idx] = direction
            direction = full
        moved, state = apply_step(state, particles, direction, eta)

        row: TrajectoryRow = {
            "step": step,
            "cfd": cfd_value,
            "sigma2": sigma2,
            "eta": eta,
            "mean_displacement": float(
                np.mean(np.linalg.norm(moved.points - particles.points, axis=1))
            ),
        }
        if method.kind is FlowKind.DIFFUSION_STEP:
            row["denoiser_gap"] = denoiser_gap(z, y, sigma2)["mean"]
        rows.append(row)
        particles = moved
        if config.log_every and (step + 1) % config.log_every == 0:
            _logger.info("%s step %d/%d cfd %.5f", method.name, step + 1, config.iterations, cfd_value)

    if config.iterations in config.snapshot_steps:
        snapshots[config.iterations] = particles
    verdict = verdict_from_trace([row["cfd"] for row in rows], meas.threshold)
    record = RunRecord(
        config=config,
        rows=rows,
        verdict=verdict,
        final_particles=particles,
        snapshots=snapshots,
        wall_time=time.perf_counter() - started,
    )
    _logger.info(
        "%s on %s [%s]: min cfd %.5f at step %d, threshold %.5f, converged=%s (%.2fs)",
        method.name,
        target.name,
        flags.label,
        verdict.min_cfd,
        verdict.step_of_min,
        verdict.threshold,
        verdict.converged,
        record.wall_time,
    )
    if config.output_dir is not None:
        write_run_outputs(config.output_dir, record)
    return record


def write_run_outputs(out_dir: Path, record: RunRecord) -> None:
    """Write ``trajectory.csv``, ``particles_final.csv``, snapshots and ``verdict.csv``."""
    out = Path(out_dir)
    columns = list(TRAJECTORY_COLUMNS)
    if record.rows and "denoiser_gap" in record.rows[0]:
        columns.append("denoiser_gap")
    write_csv_rows(
        out / "trajectory.csv",
        columns,
        ([row[c] for c in columns] for row in record.rows),  # type: ignore[literal-required]
    )
    write_particles_csv(out / "particles_final.csv", record.final_particles)
    for step, snap in sorted(record.snapshots.items()):
        write_particles_csv(out / f"particles_{step}.csv", snap)
    v = record.verdict
    write_csv_rows(
        out / "verdict.csv",
        ["method", "target", "min_cfd", "threshold", "converged", "step_of_min"],
        [
            [
                record.config.method.name,
                record.config.target,
                v.min_cfd,
                v.threshold,
                "Y" if v.converged else "N",
                v.step_of_min,
            ]
        ],
    )


# ---------------------------------------------------------------------------
# Condition tables
# ---------------------------------------------------------------------------


@dataclass
class TableCell:
    """All trials of one (condition, method) pair."""

    condition: ConditionFlags
    method: FlowMethod
    verdicts: list[ConvergenceVerdict] = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def converged_all(self) -> bool:
        return not self.failed and bool(self.verdicts) and all(v.converged for v in self.verdicts)

    @property
    def converged_majority(self) -> bool:
        hits = sum(v.converged for v in self.verdicts)
        return not self.failed and 2 * hits > len(self.verdicts)

    @property
    def average_min_cfd(self) -> float:
        if self.failed or not self.verdicts:
            return float("nan")
        return float(np.mean([v.min_cfd for v in self.verdicts]))

    @property
    def mark(self) -> str:
        if self.failed:
            return "ERR"
        return "Y" if self.converged_all else "N"


@dataclass
class ConditionTable:
    conditions: list[ConditionFlags]
    methods: list[FlowMethod]
    cells: list[list[TableCell]]
    threshold: float

    def cell(self, condition_index: int, method_name: str) -> TableCell:
        for c in self.cells[condition_index]:
            if c.method.name == method_name:
                return c
        raise KeyError(method_name)


def trial_config(
    base: ExperimentConfig, condition: ConditionFlags, method: FlowMethod, trial: int
) -> ExperimentConfig:
    """Per-trial configuration with seeds derived from ``(seed, trial)``."""
    seeds = Seeds(
        data=derive_seed(base.seeds.data, trial),
        noise=derive_seed(base.seeds.noise, trial),
        frequency=base.seeds.frequency,
    )
    return replace(base, method=method, flags=condition, seeds=seeds, output_dir=None, snapshot_steps=())


def run_condition_table(
    base_config: ExperimentConfig,
    conditions: Sequence[ConditionFlags],
    methods: Sequence[FlowMethod],
    trials: int,
    *,
    measurement: Measurement | None = None,
    workers: int = 1,
    output_dir: Path | None = None,
) -> ConditionTable:
    """Run every (condition, method, trial) and aggregate verdicts per cell.

    Runs are independent and may execute on ``workers`` threads; results are
    collected in submission order so the table does not depend on
    ``workers``. A failing run marks its cell failed without stopping the
    table.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not conditions or not methods:
        raise ConfigError("a table needs at least one condition and one method")
    target = resolve_target(base_config.target)
    meas = measurement or measurement_for(base_config, target, workers=workers)
    _logger.info(
        "table: %d conditions x %d methods x %d trials, threshold %.5f",
        len(conditions),
        len(methods),
        trials,
        meas.threshold,
    )

    def one_run(cfg: ExperimentConfig) -> RunRecord:
        return run_particle_experiment(cfg, measurement=meas, target_model=target)

    grid = [[TableCell(cond, m) for m in methods] for cond in conditions]
    jobs: list[tuple[TableCell, Future[RunRecord]]] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for row in grid:
            for cell in row:
                for trial in range(trials):
                    cfg = trial_config(base_config, cell.condition, cell.method, trial)
                    jobs.append((cell, pool.submit(one_run, cfg)))
        for cell, future in jobs:
            try:
                cell.verdicts.append(future.result().verdict)
            except SDFlowError as exc:
                if cell.error is None:
                    cell.error = str(exc)
                _logger.warning(
                    "cell %s / %s failed: %s", cell.condition.label, cell.method.name, exc
                )

    table = ConditionTable(list(conditions), list(methods), grid, meas.threshold)
    if output_dir is not None:
        write_table(output_dir, table)
    return table


def write_table(out_dir: Path, table: ConditionTable) -> None:
    """Write ``table.csv`` (Y/N per method) and ``table_details.csv``."""
    out = Path(out_dir)
    names = [m.name for m in table.methods]

    def flag_cells(cond: ConditionFlags) -> list[str]:
        return ["Y" if v else "N" for v in cond.as_dict().values()]

    write_csv_rows(
        out / "table.csv",
        [*FLAG_NAMES, *names],
        ([*flag_cells(cond), *(c.mark for c in row)] for cond, row in zip(table.conditions, table.cells, strict=True)),
    )
    detail_rows: list[list[object]] = []
    for cond, row in zip(table.conditions, table.cells, strict=True):
        for c in row:
            detail_rows.append(
                [
                    *flag_cells(cond),
                    c.method.name,
                    len(c.verdicts),
                    "Y" if c.converged_all else "N",
                    "Y" if c.converged_majority else "N",
                    c.average_min_cfd,
                    table.threshold,
                    c.error or "",
                ]
            )
    write_csv_rows(
        out / "table_details.csv",
        [
            *FLAG_NAMES,
            "method",
            "trials",
            "converged_all",
            "converged_majority",
            "avg_min_cfd",
            "threshold",
            "error",
        ],
        detail_rows,
    )


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


@dataclass
class InterpolationResult:
    snapshots: list[tuple[int, ParticleSet]]
    record: RunRecord


def run_interpolation(
    source_target: TargetModel,
    dest_target: TargetModel,
    n: int,
    config: ExperimentConfig,
    *,
    measurement: Measurement | None = None,
) -> InterpolationResult:
    """Flow a draw of ``source_target`` to ``dest_target`` with SD flow and cosine noise.

    Swap the arguments for the reverse direction. Snapshots are taken at
    ``config.snapshot_steps``; the final state is always included.

    Raises:
        ConfigError: If the two targets differ in dimension.
    """
    if source_target.dim != dest_target.dim:
        raise ConfigError(
            f"cannot interpolate {source_target.name} (dim {source_target.dim}) "
            f"to {dest_target.name} (dim {dest_target.dim})"
        )
    cfg = replace(
        config,
        method=FlowMethod(FlowKind.KERNEL_SD),
        target=dest_target.name,
        n_particles=n,
        batch_size=min(config.batch_size, n),
        flags=replace(config.flags, const_noise=False),
        snapshot_steps=tuple(sorted({*config.snapshot_steps, config.iterations})),
    )
    initial = source_target.sample(n, derive_seed(cfg.seeds.data, _STREAM_BASE))
    record = run_particle_experiment(
        cfg, measurement=measurement, target_model=dest_target, initial=initial
    )
    return InterpolationResult(sorted(record.snapshots.items()), record)
