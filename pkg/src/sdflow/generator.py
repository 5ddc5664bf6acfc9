"""Model optimization: train a linear generator by regressing flow-perturbed outputs.

Each step draws a target batch and fresh latents, generates ``y = g(xi)``,
moves ``y`` one flow step toward the target batch and regresses the
generator onto the moved points.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, TypedDict

import numpy as np
import numpy.typing as npt

from sdflow._io import write_csv_rows
from sdflow.errors import ConfigError, UsageError
from sdflow.flows import FlowKind, FlowMethod, flow_direction
from sdflow.kernel_core import FloatArray, ParticleSet, Points, as_points
from sdflow.metrics import nn_distances
from sdflow.schedules import ScheduleSpec, noise_at, step_at
from sdflow.seeding import derive_seed, make_rng
from sdflow.targets import (
    LinearGaussianSpec,
    TargetModel,
    fitted_gaussian_score,
    linear_gaussian_model,
    target_mean,
)

_logger = logging.getLogger(__name__)

NoiseScaling = Literal["variance", "std"]

# seed streams
_STREAM_TARGET_POOL = 0
_STREAM_BATCH = 1
_STREAM_LATENT = 2
_STREAM_NOISE = 3
_STREAM_INIT = 4
_STREAM_REPORT = 5

# Noise variance reported for the R^50 experiment, for comparison in logs.
REFERENCE_NOISE_SIGMA2 = 700.0


@dataclass(frozen=True, eq=False)
class LinearGenerator:
    """``g(xi) = B_hat xi + mu_hat``."""

    B_hat: FloatArray
    mu_hat: FloatArray

    def __post_init__(self) -> None:
        b = np.array(self.B_hat, dtype=np.float64)
        m = np.array(self.mu_hat, dtype=np.float64).reshape(-1)
        if b.ndim != 2 or b.shape[0] != m.shape[0]:
            raise UsageError(f"B_hat {b.shape} and mu_hat {m.shape} do not match")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(m))):
            raise UsageError("generator parameters must be finite")
        object.__setattr__(self, "B_hat", b)
        object.__setattr__(self, "mu_hat", m)

    @property
    def d_out(self) -> int:
        return int(self.B_hat.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.B_hat.shape[1])


def init_linear_generator(d_out: int, d_in: int, seed: int) -> LinearGenerator:
    """``B_hat ~ N(0, 0.01)`` entrywise and ``mu_hat = 0``."""
    rng = make_rng(seed)
    return LinearGenerator(rng.normal(0.0, 0.1, size=(d_out, d_in)), np.zeros(d_out))


def _latents(g: LinearGenerator, xi: npt.ArrayLike) -> FloatArray:
    xs = as_points(xi)
    if xs.shape[1] != g.d_in:
        raise UsageError(f"latent dimension {xs.shape[1]} does not match generator input {g.d_in}")
    return xs


def generate(g: LinearGenerator, xi: npt.ArrayLike) -> ParticleSet:
    """Map a latent batch ``(m, d_in)`` to outputs ``(m, d_out)``."""
    xs = _latents(g, xi)
    return ParticleSet(xs @ g.B_hat.T + g.mu_hat)


def _residual(g: LinearGenerator, xi: npt.ArrayLike, y_target: Points) -> tuple[FloatArray, FloatArray]:
    xs = _latents(g, xi)
    ys = as_points(y_target)
    if ys.shape != (xs.shape[0], g.d_out):
        raise UsageError(
            f"targets of shape {ys.shape} do not match {xs.shape[0]} outputs of dim {g.d_out}"
        )
    return xs, xs @ g.B_hat.T + g.mu_hat - ys


def regression_loss(g: LinearGenerator, xi: npt.ArrayLike, y_target: Points) -> float:
    """``1/2`` times the batch mean of ``||g(xi_i) - y_i||^2``."""
    _, resid = _residual(g, xi, y_target)
    return 0.5 * float(np.mean(np.sum(resid * resid, axis=1)))


def regression_gradient(
    g: LinearGenerator, xi: npt.ArrayLike, y_target: Points
) -> tuple[FloatArray, FloatArray]:
    """Gradient of :func:`regression_loss` with respect to ``(B_hat, mu_hat)``."""
    xs, resid = _residual(g, xi, y_target)
    m = xs.shape[0]
    return resid.T @ xs / m, resid.mean(axis=0)


def regress_step(
    g: LinearGenerator, xi: npt.ArrayLike, y_target: Points, lam: float
) -> LinearGenerator:
    """One gradient step of size ``lam`` on the batch-mean regression loss."""
    if not lam > 0.0:
        raise UsageError(f"lambda must be positive, got {lam}")
    grad_b, grad_mu = regression_gradient(g, xi, y_target)
    return LinearGenerator(g.B_hat - lam * grad_b, g.mu_hat - lam * grad_mu)


def nn_noise_sigma2(
    base: Points,
    target: Points,
    multiplier: float = 10.0,
    applies_to: NoiseScaling = "std",
) -> float:
    """Noise level from the mean base-to-target nearest-neighbour distance ``dbar``.

    ``applies_to="std"`` sets the noise standard deviation, ``sigma2 = (multiplier * dbar)^2``;
    ``applies_to="variance"`` gives ``sigma2 = multiplier * dbar``.
    """
    dbar = float(np.mean(nn_distances(base, target)))
    if applies_to == "variance":
        sigma2 = multiplier * dbar
    elif applies_to == "std":
        sigma2 = (multiplier * dbar) ** 2
    else:
        raise UsageError(f"applies_to must be 'variance' or 'std', got {applies_to!r}")
    _logger.info(
        "mean NN distance %.4f -> noise sigma2 %.4f (%s scaling; reference level %.0f)",
        dbar,
        sigma2,
        applies_to,
        REFERENCE_NOISE_SIGMA2,
    )
    return sigma2


class ModelOptRow(TypedDict):
    step: int
    sigma2: float
    eta: float
    regression_loss: float
    mean_error: float


@dataclass
class ModelOptRecord:
    """Per-step trace of a model-optimization run."""

    rows: list[ModelOptRow] = field(default_factory=list)
    wall_time: float = 0.0


def model_opt_loop(
    target: TargetModel,
    g0: LinearGenerator,
    flow: FlowMethod,
    schedule: ScheduleSpec,
    lam: float,
    batch: int,
    steps: int,
    seed: int,
    *,
    n_target: int = 4096,
    log_every: int = 100,
) -> tuple[LinearGenerator, ModelOptRecord]:
    """Train ``g0`` toward ``target``.

    The target pool of ``n_target`` points is drawn once; each step takes a
    batch of it without replacement, fresh latents and fresh noise, all from
    streams derived from ``seed``.

    Args:
        target: Distribution to fit; ``target.dim`` must equal ``g0.d_out``.
        g0: Initial generator.
        flow: Update rule used to perturb generated samples.
        schedule: Noise/step schedule; must cover ``steps``.
        lam: Regression step size (batch-mean convention).
        batch: Batch size, at most ``n_target``.
        steps: Number of iterations; 0 returns ``g0`` unchanged.
        seed: Root seed.
        n_target: Size of the fixed target pool.
        log_every: Progress log period in steps.

    Raises:
        ConfigError: On inconsistent settings (dimension, batch, schedule
            length, missing target score).
    """
    if target.dim != g0.d_out:
        raise ConfigError(f"target dim {target.dim} does not match generator output {g0.d_out}")
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    if not 1 <= batch <= n_target:
        raise ConfigError(f"batch must lie in [1, {n_target}], got {batch}")
    if steps > schedule.total_steps:
        raise ConfigError(f"schedule covers {schedule.total_steps} steps, run needs {steps}")
    if flow.needs_target_score and target.score is None:
        raise ConfigError(f"{flow.name} needs an analytic score, target {target.name} has none")
    if not lam > 0.0:
        raise ConfigError(f"lambda must be positive, got {lam}")

    record = ModelOptRecord()
    if steps == 0:
        return g0, record

    started = time.perf_counter()
    pool = target.sample(n_target, derive_seed(seed, _STREAM_TARGET_POOL)).points
    ref_mean = target_mean(target)
    ref_norm = max(float(np.linalg.norm(ref_mean)), np.finfo(np.float64).tiny)
    g = g0
    for step in range(steps):
        idx = make_rng(seed, _STREAM_BATCH, step).choice(n_target, size=batch, replace=False)
        x = pool[idx]
        xi = make_rng(seed, _STREAM_LATENT, step).standard_normal((batch, g.d_in))
        y = generate(g, xi).points
        sigma2 = noise_at(schedule, step)
        eps = make_rng(seed, _STREAM_NOISE, step).standard_normal(y.shape)
        z = y + np.sqrt(sigma2) * eps
        score_q = fitted_gaussian_score(y) if flow.kind is FlowKind.ANALYTIC_SD else None
        direction = flow_direction(
            flow, z=z, source=y, target=x, sigma2=sigma2, score_p=target.score, score_q=score_q
        )
        eta = flow.rho if flow.rho is not None else step_at(schedule, step)
        moved = y + eta * direction
        loss = regression_loss(g, xi, moved)
        g = regress_step(g, xi, moved, lam)
        record.rows.append(
            {
                "step": step,
                "sigma2": sigma2,
                "eta": eta,
                "regression_loss": loss,
                "mean_error": float(np.linalg.norm(g.mu_hat - ref_mean)) / ref_norm,
            }
        )
        if log_every and (step + 1) % log_every == 0:
            _logger.info(
                "model-opt step %d/%d loss %.6g mean error %.4g",
                step + 1,
                steps,
                loss,
                record.rows[-1]["mean_error"],
            )
    record.wall_time = time.perf_counter() - started
    _logger.info("model-opt finished %d steps in %.2fs", steps, record.wall_time)
    return g, record


@dataclass(frozen=True, eq=False)
class ModelReport:
    """Fit quality of a trained generator against a linear-Gaussian target.

    Attributes:
        relative_mean_error: ``||mu_hat - mu|| / ||mu||``.
        covariance_correlation: Pearson correlation of the entries of
            ``B_hat B_hat^T`` and ``B B^T``.
        mean_pairs: ``(d, 2)`` rows of ``(mu_k, mu_hat_k)``.
        covariance_pairs: ``(d*d, 2)`` rows of ``(C_ij, C_hat_ij)``.
        nn_generated: Generated-to-target nearest-neighbour distances.
        nn_target: Target self nearest-neighbour distances.
    """

    relative_mean_error: float
    covariance_correlation: float
    mean_pairs: FloatArray
    covariance_pairs: FloatArray
    nn_generated: FloatArray
    nn_target: FloatArray

    @property
    def overfit_ratio(self) -> float:
        """Median generated NN distance over the median target self-NN distance."""
        return float(np.median(self.nn_generated) / np.median(self.nn_target))


def model_report(
    spec: LinearGaussianSpec, g: LinearGenerator, *, n: int = 1024, seed: int = 0
) -> ModelReport:
    if spec.dim != g.d_out:
        raise UsageError("generator and target dimensions differ")
    mu = spec.mu
    rel = float(np.linalg.norm(g.mu_hat - mu) / np.linalg.norm(mu))
    cov = spec.covariance
    cov_hat = g.B_hat @ g.B_hat.T
    corr = float(np.corrcoef(cov.ravel(), cov_hat.ravel())[0, 1])
    xi = make_rng(seed, _STREAM_REPORT, 0).standard_normal((n, g.d_in))
    generated = generate(g, xi)
    xi_t = make_rng(seed, _STREAM_REPORT, 1).standard_normal((n, spec.latent_dim))
    reference = xi_t @ spec.B.T + spec.mu
    return ModelReport(
        relative_mean_error=rel,
        covariance_correlation=corr,
        mean_pairs=np.column_stack([mu, g.mu_hat]),
        covariance_pairs=np.column_stack([cov.ravel(), cov_hat.ravel()]),
        nn_generated=nn_distances(generated, reference),
        nn_target=nn_distances(reference, reference, exclude_self=True),
    )


@dataclass(frozen=True)
class ModelOptSettings:
    """Settings of the R^50 linear-model experiment.

    ``lam`` is in the batch-mean convention: ``1e-3`` per summed sample times
    the batch size of 1024.
    """

    d_out: int = 50
    d_in: int = 25
    batch: int = 1024
    steps: int = 1000
    eta: float = 1.0
    lam: float = 1.024
    noise_multiplier: float = 10.0
    noise_applies_to: NoiseScaling = "std"
    n_target: int = 4096
    target_seed: int = 0
    seed: int = 1
    method: str = "sd"


@dataclass
class ModelOptResult:
    generator: LinearGenerator
    record: ModelOptRecord
    report: ModelReport
    sigma2: float


def run_model_optimization(settings: ModelOptSettings) -> ModelOptResult:
    """Build the linear target, pick the noise level, train and report."""
    target = linear_gaussian_model(settings.d_out, settings.d_in, settings.target_seed)
    assert isinstance(target.spec, LinearGaussianSpec)
    g0 = init_linear_generator(settings.d_out, settings.d_in, derive_seed(settings.seed, _STREAM_INIT))
    probe_xi = make_rng(settings.seed, _STREAM_INIT, 1).standard_normal((settings.batch, settings.d_in))
    probe_target = target.sample(settings.batch, derive_seed(settings.seed, _STREAM_INIT, 2))
    sigma2 = nn_noise_sigma2(
        generate(g0, probe_xi),
        probe_target,
        settings.noise_multiplier,
        settings.noise_applies_to,
    )
    schedule = ScheduleSpec.constant(sigma2, settings.eta, max(settings.steps, 1))
    g, record = model_opt_loop(
        target,
        g0,
        FlowMethod.parse(settings.method),
        schedule,
        settings.lam,
        settings.batch,
        settings.steps,
        settings.seed,
        n_target=settings.n_target,
    )
    report = model_report(target.spec, g, n=settings.batch, seed=settings.seed)
    _logger.info(
        "model-opt: relative mean error %.4f, covariance correlation %.4f, overfit ratio %.3f",
        report.relative_mean_error,
        report.covariance_correlation,
        report.overfit_ratio,
    )
    return ModelOptResult(g, record, report, sigma2)


def _matrix_rows(values: FloatArray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(values)]


def write_model_outputs(out_dir: Path, result: ModelOptResult) -> None:
    """Write parameters, the per-step trace and the three report panels as CSV."""
    out = Path(out_dir)
    g, report = result.generator, result.report
    write_csv_rows(out / "B_hat.csv", [f"c{j}" for j in range(g.d_in)], _matrix_rows(g.B_hat))
    write_csv_rows(out / "mu_hat.csv", ["mu_hat"], _matrix_rows(g.mu_hat[:, np.newaxis]))
    header = ["step", "sigma2", "eta", "regression_loss", "mean_error"]
    write_csv_rows(
        out / "trajectory.csv",
        header,
        ([row[key] for key in header] for row in result.record.rows),  # type: ignore[literal-required]
    )
    write_csv_rows(out / "mean_pairs.csv", ["mu", "mu_hat"], _matrix_rows(report.mean_pairs))
    write_csv_rows(
        out / "covariance_pairs.csv", ["cov", "cov_hat"], _matrix_rows(report.covariance_pairs)
    )
    write_csv_rows(
        out / "nn_distances.csv",
        ["set", "distance"],
        [["generated", float(d)] for d in report.nn_generated]
        + [["target", float(d)] for d in report.nn_target],
    )
    write_csv_rows(
        out / "summary.csv",
        ["relative_mean_error", "covariance_correlation", "overfit_ratio", "sigma2"],
        [
            [
                report.relative_mean_error,
                report.covariance_correlation,
                report.overfit_ratio,
                result.sigma2,
            ]
        ],
    )
