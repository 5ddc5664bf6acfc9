"""Particle update rules.

Every rule returns an *unscaled* direction ``(N, d)``; the caller applies its
step size. The variance prefactors of the continuous-time dynamics are folded
into that step, so a kernel SD direction is the plain difference of two
kernel-weighted means.

Rules:
    - :func:`sd_update`: kernel score-difference flow.
    - :func:`mmd_update`: MMD gradient flow, raw or with normalized weights.
    - :func:`svgd_update`: Stein variational gradient descent.
    - :func:`analytic_sd_update`: difference of two known scores.
    - :func:`denoiser` / :func:`diffusion_step`: the denoiser form and the
      diffusion-style convex update built on it.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import TypedDict

import numpy as np
import numpy.typing as npt

from sdflow.errors import EvaluationError, UsageError
from sdflow.kernel_core import (
    FloatArray,
    Points,
    as_points,
    check_same_dim,
    check_sigma2,
    kernel_matrix,
    kernel_weights,
)

_logger = logging.getLogger(__name__)

ScoreFunction = Callable[[FloatArray], FloatArray]
"""Maps an ``(N, d)`` array of points to the ``(N, d)`` log-density gradients."""


class FlowKind(enum.Enum):
    """Available update rules; values are the names used in configs and CSVs."""

    KERNEL_SD = "sd"
    MMD = "mmd"
    MMD_NORMALIZED = "mmd_normalized"
    SVGD = "svgd"
    ANALYTIC_SD = "analytic_sd"
    DIFFUSION_STEP = "diffusion_step"


@dataclass(frozen=True)
class FlowMethod:
    """A selected update rule plus its own parameters.

    Attributes:
        kind: Which rule to apply.
        rho: Fixed convex step for ``DIFFUSION_STEP``; ``None`` means the
            caller's step size is used. Must lie in ``[0, 1]``.
    """

    kind: FlowKind
    rho: float | None = None

    def __post_init__(self) -> None:
        if self.rho is not None:
            if self.kind is not FlowKind.DIFFUSION_STEP:
                raise UsageError("rho only applies to the diffusion_step method")
            if not 0.0 <= self.rho <= 1.0:
                raise UsageError(f"rho must lie in [0, 1], got {self.rho}")

    @classmethod
    def parse(cls, name: str) -> FlowMethod:
        """Build a method from its config name (e.g. ``"sd"``, ``"svgd"``)."""
        try:
            return cls(FlowKind(name.strip().lower()))
        except ValueError:
            names = ", ".join(k.value for k in FlowKind)
            raise UsageError(f"unknown flow method {name!r} (expected one of: {names})") from None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def needs_target_score(self) -> bool:
        return self.kind in (FlowKind.SVGD, FlowKind.ANALYTIC_SD)


def _nonempty(values: Points, what: str) -> FloatArray:
    arr = as_points(values)
    if arr.shape[0] == 0:
        raise UsageError(f"{what} must not be empty")
    return arr


def evaluate_score(score: ScoreFunction, points: FloatArray) -> FloatArray:
    """Call ``score`` and check that it returned finite values of the right shape.

    Raises:
        EvaluationError: If the call fails or its output is malformed.
    """
    try:
        out = np.asarray(score(points), dtype=np.float64)
    except Exception as exc:
        raise EvaluationError(f"score evaluation failed: {exc}") from exc
    if out.shape != points.shape:
        raise EvaluationError(
            f"score returned shape {out.shape} for points of shape {points.shape}"
        )
    if not np.all(np.isfinite(out)):
        raise EvaluationError("score returned non-finite values")
    return out


def denoiser(z: Points, data: Points, sigma2: float) -> FloatArray:
    """Empirical optimal denoiser: the kernel-weighted mean of ``data`` at each z.

    Args:
        z: Noisy evaluation points ``(N, d)``.
        data: Clean data set ``(M, d)``, non-empty.
        sigma2: Noise variance / squared bandwidth.

    Returns:
        ``(N, d)`` array; each row lies in the convex hull of ``data``.
    """
    zs = as_points(z)
    xs = _nonempty(data, "data")
    check_same_dim(zs, xs)
    return kernel_weights(zs, xs, sigma2) @ xs


def sd_update(z: Points, target: Points, source: Points, sigma2: float) -> FloatArray:
    """Kernel score-difference direction.

    ``dZ(z) = D_target(z) - D_source(z)`` where ``D`` is :func:`denoiser`.

    Raises:
        UsageError: On empty target/source, dimension mismatch or bad sigma2.
    """
    zs = as_points(z)
    xs = _nonempty(target, "target")
    ys = _nonempty(source, "source")
    check_same_dim(zs, xs, ys)
    return denoiser(zs, xs, sigma2) - denoiser(zs, ys, sigma2)


def mmd_update(
    z: Points,
    target: Points,
    source: Points,
    sigma2: float,
    *,
    normalized: bool = False,
) -> FloatArray:
    """MMD gradient-flow direction (negative witness-function gradient).

    Raw mode averages ``K(z, x)(x - z) / sigma2`` over the target minus the
    same average over the source. Normalized mode gives each set weights
    that sum to one half, which removes the ``z`` term and equals half the
    kernel SD direction exactly.
    """
    zs = as_points(z)
    xs = _nonempty(target, "target")
    ys = _nonempty(source, "source")
    check_same_dim(zs, xs, ys)
    s2 = check_sigma2(sigma2)
    if normalized:
        return 0.5 * denoiser(zs, xs, s2) - 0.5 * denoiser(zs, ys, s2)

    kx = kernel_matrix(zs, xs, s2)
    ky = kernel_matrix(zs, ys, s2)
    pull = (kx @ xs - kx.sum(axis=1, keepdims=True) * zs) / xs.shape[0]
    push = (ky @ ys - ky.sum(axis=1, keepdims=True) * zs) / ys.shape[0]
    return (pull - push) / s2


def svgd_update(z: Points, score_p: ScoreFunction, sigma2: float) -> FloatArray:
    """Stein variational direction using the particle set itself as the sample.

    ``phi(z_i) = 1/N sum_j [K(z_i, z_j) score_p(z_j) + K(z_i, z_j)(z_i - z_j)/sigma2]``
    """
    zs = _nonempty(z, "particles")
    s2 = check_sigma2(sigma2)
    k = kernel_matrix(zs, zs, s2)
    drive = k @ evaluate_score(score_p, zs)
    repulse = k.sum(axis=1, keepdims=True) * zs - k @ zs
    return (drive + repulse / s2) / zs.shape[0]


def analytic_sd_update(
    z: Points, score_p: ScoreFunction, score_q: ScoreFunction
) -> FloatArray:
    """Difference of two known scores evaluated at every particle."""
    zs = _nonempty(z, "particles")
    return evaluate_score(score_p, zs) - evaluate_score(score_q, zs)


def diffusion_rho(sigma2_t: float, sigma2_s: float) -> float:
    """Convex step ``rho = 1 - sigma2_s / sigma2_t`` of one reverse-diffusion step.

    Raises:
        UsageError: Unless ``0 <= sigma2_s <= sigma2_t`` and ``sigma2_t > 0``.
    """
    t = check_sigma2(sigma2_t)
    s = float(sigma2_s)
    if not 0.0 <= s <= t:
        raise UsageError(
            f"reverse diffusion needs 0 <= sigma2_s <= sigma2_t, got {s} > {t}"
            if s > t
            else f"sigma2_s must be non-negative, got {s}"
        )
    return 1.0 - s / t


def diffusion_noise_variance(sigma2_t: float, sigma2_s: float) -> float:
    """Variance ``rho*sigma2_s + (1 - rho)^2 * sigma2_t`` left after one step.

    It always equals ``sigma2_s``, which is what makes the approximate SD
    update coincide with the reverse diffusion process.
    """
    rho = diffusion_rho(sigma2_t, sigma2_s)
    return rho * float(sigma2_s) + (1.0 - rho) ** 2 * float(sigma2_t)


def diffusion_step(
    y: npt.ArrayLike,
    data: Points,
    sigma2_t: float,
    sigma2_s: float,
    noise_eps: npt.ArrayLike,
) -> FloatArray:
    """One diffusion-style update ``y <- (1 - rho) y + rho D(y + sigma_t eps)``.

    Works on a single point ``(d,)`` or on a batch ``(N, d)``; ``noise_eps``
    must have the same shape as ``y``.

    Raises:
        UsageError: If ``sigma2_s > sigma2_t`` or the shapes disagree.
    """
    rho = diffusion_rho(sigma2_t, sigma2_s)
    yv = np.asarray(y, dtype=np.float64)
    eps = np.asarray(noise_eps, dtype=np.float64)
    if yv.shape != eps.shape:
        raise UsageError(f"noise shape {eps.shape} does not match point shape {yv.shape}")
    single = yv.ndim == 1
    ys = yv[np.newaxis, :] if single else yv
    zs = ys + np.sqrt(float(sigma2_t)) * (eps[np.newaxis, :] if single else eps)
    out = (1.0 - rho) * ys + rho * denoiser(zs, data, sigma2_t)
    return out[0] if single else out


class DenoiserGap(TypedDict):
    """Summary of ``||D_source(z) - y||`` over a batch."""

    mean: float
    median: float
    max: float


def denoiser_gap(z: Points, source: Points, sigma2: float) -> DenoiserGap:
    """Measure how far the source denoiser is from the clean particles.

    ``z`` must be the noisy copies of ``source`` row by row. The diffusion
    form replaces ``D_source(z)`` with ``y``; this reports the size of that
    substitution.
    """
    zs = as_points(z)
    ys = _nonempty(source, "source")
    if zs.shape != ys.shape:
        raise UsageError("z must be the row-wise noisy copy of source")
    gap = np.linalg.norm(denoiser(zs, ys, sigma2) - ys, axis=1)
    return {
        "mean": float(gap.mean()),
        "median": float(np.median(gap)),
        "max": float(gap.max()),
    }


def flow_direction(
    method: FlowMethod,
    *,
    z: Points,
    source: Points,
    target: Points,
    sigma2: float,
    score_p: ScoreFunction | None = None,
    score_q: ScoreFunction | None = None,
) -> FloatArray:
    """Dispatch ``method`` on one batch.

    Args:
        method: Rule to apply.
        z: Evaluation points, row-aligned with ``source`` (noisy or clean).
        source: Clean source particles being moved.
        target: Target data batch.
        sigma2: Current noise variance / bandwidth.
        score_p: Target score (SVGD, AnalyticSD).
        score_q: Source score (AnalyticSD).

    Returns:
        Unscaled direction for every row of ``source``.
    """
    kind = method.kind
    if kind is FlowKind.KERNEL_SD:
        return sd_update(z, target, source, sigma2)
    if kind is FlowKind.MMD:
        return mmd_update(z, target, source, sigma2, normalized=False)
    if kind is FlowKind.MMD_NORMALIZED:
        return mmd_update(z, target, source, sigma2, normalized=True)
    if kind is FlowKind.SVGD:
        if score_p is None:
            raise UsageError("svgd needs the target score")
        return svgd_update(z, score_p, sigma2)
    if kind is FlowKind.ANALYTIC_SD:
        if score_p is None or score_q is None:
            raise UsageError("analytic_sd needs both scores")
        return analytic_sd_update(z, score_p, score_q)
    # diffusion step: D_target(z) - y, the source denoiser replaced by y
    return denoiser(z, target, sigma2) - as_points(source)
