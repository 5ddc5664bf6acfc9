"""Convergence measurement.

The characteristic function distance (CFD) compares two samples through
their empirical characteristic functions at a fixed set of random
frequencies. Complex values are carried as paired cosine/sine means.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist

from sdflow.errors import EvaluationError, UsageError
from sdflow.kernel_core import (
    FloatArray,
    ParticleSet,
    Points,
    as_points,
    check_same_dim,
)
from sdflow.seeding import SeedLike, derive_seed, make_rng

_logger = logging.getLogger(__name__)

DEFAULT_FREQUENCIES = 256

Sampler = Callable[[int, SeedLike], ParticleSet]


@dataclass(frozen=True, eq=False)
class FrequencySet:
    """``K`` frequencies in ``d`` dimensions, fixed for a whole comparison."""

    omegas: FloatArray

    def __post_init__(self) -> None:
        om = np.array(self.omegas, dtype=np.float64)
        if om.ndim != 2 or om.shape[0] < 1:
            raise UsageError(f"omegas must be a non-empty (K, d) array, got {om.shape}")
        om.setflags(write=False)
        object.__setattr__(self, "omegas", om)

    @property
    def count(self) -> int:
        return int(self.omegas.shape[0])

    @property
    def dim(self) -> int:
        return int(self.omegas.shape[1])


def draw_frequencies(
    dim: int,
    count: int = DEFAULT_FREQUENCIES,
    seed: SeedLike = 0,
    scale: float = 1.0,
) -> FrequencySet:
    """Draw ``count`` frequencies from ``N(0, scale^2 I_dim)``."""
    if dim < 1 or count < 1:
        raise UsageError("dim and count must be positive")
    rng = make_rng(seed)
    return FrequencySet(scale * rng.standard_normal((count, dim)))


@dataclass(frozen=True)
class ConvergenceVerdict:
    """Minimum CFD of a run compared with the calibrated threshold."""

    min_cfd: float
    threshold: float
    step_of_min: int

    @property
    def converged(self) -> bool:
        return self.min_cfd < self.threshold


def verdict_from_trace(cfds: Sequence[float], threshold: float) -> ConvergenceVerdict:
    """Build the verdict from a per-step CFD trace (first minimum wins)."""
    if not cfds:
        raise UsageError("an empty CFD trace has no verdict")
    values = np.asarray(cfds, dtype=np.float64)
    step = int(np.argmin(values))
    return ConvergenceVerdict(float(values[step]), float(threshold), step)


def empirical_cf(points: Points, freqs: FrequencySet) -> tuple[FloatArray, FloatArray]:
    """Real and imaginary parts of the empirical characteristic function."""
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise UsageError("cannot take the characteristic function of an empty set")
    check_same_dim(pts, freqs.omegas)
    phase = pts @ freqs.omegas.T
    return np.cos(phase).mean(axis=0), np.sin(phase).mean(axis=0)


def cf_distance(
    cf_a: tuple[FloatArray, FloatArray], cf_b: tuple[FloatArray, FloatArray]
) -> float:
    """Mean modulus of the difference of two characteristic functions."""
    return float(np.mean(np.hypot(cf_a[0] - cf_b[0], cf_a[1] - cf_b[1])))


def cfd(x: Points, y: Points, freqs: FrequencySet) -> float:
    """Characteristic function distance between two samples, in ``[0, 2]``.

    Raises:
        UsageError: On empty sets or mismatched dimensions.
    """
    return cf_distance(empirical_cf(x, freqs), empirical_cf(y, freqs))


def calibrate_threshold(
    sampler: Sampler | Any,
    n: int,
    trials: int,
    freqs: FrequencySet,
    seed: int,
    *,
    workers: int = 1,
) -> float:
    """Maximum CFD between two independent size-``n`` target draws over ``trials``.

    ``sampler`` is a ``(n, seed) -> ParticleSet`` callable or any object with
    such a ``sample`` method (a target model). Each trial uses seeds derived
    from ``(seed, trial)``, so the result is reproducible and independent of
    ``workers``.

    Raises:
        EvaluationError: If the sampler fails.
    """
    if n < 1 or trials < 1:
        raise UsageError("n and trials must be positive")
    draw: Sampler = getattr(sampler, "sample", sampler)

    def one_trial(trial: int) -> float:
        try:
            first = draw(n, derive_seed(seed, trial, 0))
            second = draw(n, derive_seed(seed, trial, 1))
        except Exception as exc:
            raise EvaluationError(f"sampler failed in calibration trial {trial}: {exc}") from exc
        return cfd(first, second, freqs)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one_trial, range(trials)))
    else:
        values = [one_trial(t) for t in range(trials)]
    threshold = float(max(values))
    _logger.info("calibrated CFD threshold %.6f over %d trials (n=%d)", threshold, trials, n)
    return threshold


def nn_distances(a: Points, b: Points, *, exclude_self: bool = False) -> FloatArray:
    """Distance from every point of ``a`` to its nearest neighbour in ``b``.

    Exact brute force, processed in row blocks to bound memory.

    Args:
        a: Query points.
        b: Reference points.
        exclude_self: ``a`` and ``b`` are the same set; skip the zero
            self-distance (requires ``N >= 2``).
    """
    pa, pb = as_points(a), as_points(b)
    check_same_dim(pa, pb)
    if exclude_self:
        if pa.shape != pb.shape:
            raise UsageError("exclude_self needs a and b to be the same set")
        if pa.shape[0] < 2:
            raise UsageError("exclude_self needs at least two points")
    out = np.empty(pa.shape[0], dtype=np.float64)
    block = 1024
    for start in range(0, pa.shape[0], block):
        stop = min(start + block, pa.shape[0])
        dist = cdist(pa[start:stop], pb)
        if exclude_self:
            rows = np.arange(stop - start)
            dist[rows, rows + start] = np.inf
        out[start:stop] = dist.min(axis=1)
    return out


def gaussian_kl(
    points: Points, mean_p: npt.ArrayLike, cov_p: npt.ArrayLike
) -> float:
    """KL divergence from the moment-fitted Gaussian of ``points`` to ``N(mean_p, cov_p)``."""
    pts = as_points(points)
    d = pts.shape[1]
    m_q = pts.mean(axis=0)
    s_q = np.atleast_2d(np.cov(pts, rowvar=False))
    m_p = np.broadcast_to(np.asarray(mean_p, dtype=np.float64), (d,))
    s_p = np.atleast_2d(np.asarray(cov_p, dtype=np.float64))
    if s_p.shape == (1, 1) and d > 1:
        s_p = s_p[0, 0] * np.eye(d)
    sign_q, logdet_q = np.linalg.slogdet(s_q)
    sign_p, logdet_p = np.linalg.slogdet(s_p)
    if sign_q <= 0 or sign_p <= 0:
        raise EvaluationError("covariance is not positive definite")
    diff = m_p - m_q
    trace = float(np.trace(np.linalg.solve(s_p, s_q)))
    maha = float(diff @ np.linalg.solve(s_p, diff))
    return 0.5 * (trace + maha - d + logdet_p - logdet_q)
