"""Toy target and base distributions.

Each target is a :class:`TargetModel`: a seeded sampler plus the generative
parameters it was built from and, for Gaussian mixtures, the exact score.

Geometry choices (grid spacing and component width, the question-mark
center table, the Swiss-roll parameterization, the offset distance) are
fixed here and versioned via :data:`MYSTERY_TABLE_VERSION`; calibrated
convergence thresholds depend on them.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from sdflow._io import atomic_write_text, format_float
from sdflow.errors import DegenerateInputError, UsageError
from sdflow.flows import ScoreFunction
from sdflow.kernel_core import FloatArray, ParticleSet, Points, as_points
from sdflow.seeding import SeedLike, make_rng

_logger = logging.getLogger(__name__)

Sampler = Callable[[int, SeedLike], ParticleSet]

COMPONENT_SIGMA = 0.2
GRID_LEVELS = (-4.0, -2.0, 0.0, 2.0, 4.0)
MYSTERY_TABLE_VERSION = 1
OFFSET_FACTOR = 1.5
REFERENCE_SAMPLE_SIZE = 4096

_WEIGHT_TOLERANCE = 1e-12


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    """Isotropic Gaussian mixture.

    Attributes:
        weights: Mixing weights ``(K,)`` summing to one.
        means: Component centers ``(K, d)``.
        variances: Per-component isotropic variances ``(K,)``.
    """

    weights: FloatArray
    means: FloatArray
    variances: FloatArray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64).reshape(-1)
        if mu.ndim == 1:
            mu = mu[:, np.newaxis]
        k = w.shape[0]
        if k < 1 or mu.shape[0] != k or var.shape[0] != k:
            raise UsageError(
                f"mixture needs matching weights/means/variances, got {w.shape}, {mu.shape}, {var.shape}"
            )
        if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > _WEIGHT_TOLERANCE:
            raise UsageError("mixture weights must be non-negative and sum to 1")
        if np.any(var <= 0.0) or not np.all(np.isfinite(mu)):
            raise UsageError("mixture variances must be positive and means finite")
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @classmethod
    def equal_weights(cls, means: npt.ArrayLike, sigma: float) -> GaussianMixtureSpec:
        mu = np.asarray(means, dtype=np.float64)
        k = mu.shape[0]
        return cls(np.full(k, 1.0 / k), mu, np.full(k, sigma * sigma))

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def mean(self) -> FloatArray:
        return np.asarray(self.weights @ self.means, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LinearGaussianSpec:
    """``x = B xi + mu`` with ``xi ~ N(0, I)``."""

    B: FloatArray
    mu: FloatArray

    def __post_init__(self) -> None:
        b = np.array(self.B, dtype=np.float64)
        m = np.array(self.mu, dtype=np.float64).reshape(-1)
        if b.ndim != 2 or b.shape[0] != m.shape[0]:
            raise UsageError(f"B {b.shape} and mu {m.shape} do not match")
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "mu", m)

    @property
    def dim(self) -> int:
        return int(self.B.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.B.shape[1])

    @property
    def covariance(self) -> FloatArray:
        return np.asarray(self.B @ self.B.T, dtype=np.float64)


@dataclass(frozen=True)
class SwissRollSpec:
    """``s * (t cos t, h, t sin t)`` with uniform ``t`` and ``h``."""

    scale: float = 0.5
    t_min: float = 1.5 * math.pi
    t_max: float = 4.5 * math.pi
    height: float = 10.0

    dim: int = field(default=3, init=False)


TargetSpec = GaussianMixtureSpec | LinearGaussianSpec | SwissRollSpec


@dataclass(frozen=True)
class TargetModel:
    """A named distribution with a seeded sampler.

    Attributes:
        name: Registry identifier (``grid25``, ``mystery30``, ...).
        dim: Dimension of every sample.
        sampler: ``(n, seed) -> ParticleSet``, pure given its arguments.
        spec: The generative parameters.
        score: Exact score of ``spec`` when one exists.
    """

    name: str
    dim: int
    sampler: Sampler
    spec: TargetSpec
    score: ScoreFunction | None = None

    def sample(self, n: int, seed: SeedLike) -> ParticleSet:
        """Draw ``n`` points, checking the declared dimension."""
        _check_count(n)
        out = self.sampler(n, seed)
        if out.dim != self.dim:
            raise UsageError(f"{self.name} sampler returned dim {out.dim}, expected {self.dim}")
        return out

    @property
    def has_score(self) -> bool:
        return self.score is not None


def _check_count(n: int) -> None:
    if n < 1:
        raise UsageError(f"sample count must be >= 1, got {n}")


# ---------------------------------------------------------------------------
# Mixtures
# ---------------------------------------------------------------------------


def sample_mixture(spec: GaussianMixtureSpec, n: int, seed: SeedLike) -> ParticleSet:
    """Sample a mixture: one uniform per point picks the component by inverse CDF."""
    _check_count(n)
    rng = make_rng(seed)
    cdf = np.cumsum(spec.weights)
    idx = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), spec.n_components - 1)
    noise = rng.standard_normal((n, spec.dim))
    return ParticleSet(spec.means[idx] + np.sqrt(spec.variances[idx])[:, np.newaxis] * noise)


def _component_log_terms(spec: GaussianMixtureSpec, zs: FloatArray) -> FloatArray:
    """``log w_k + log N(z; mu_k, var_k I)`` for every row and component."""
    if zs.shape[1] != spec.dim:
        raise UsageError(f"point dimension {zs.shape[1]} does not match mixture dim {spec.dim}")
    sq = cdist(zs, spec.means, metric="sqeuclidean")
    with np.errstate(divide="ignore"):
        log_w = np.log(spec.weights)
    log_norm = -0.5 * spec.dim * np.log(2.0 * math.pi * spec.variances)
    return np.asarray(log_w + log_norm - sq / (2.0 * spec.variances), dtype=np.float64)


def mixture_log_density(spec: GaussianMixtureSpec, z: npt.ArrayLike) -> FloatArray | float:
    """Log-density of the mixture at one point ``(d,)`` or many ``(N, d)``."""
    zv = np.asarray(z, dtype=np.float64)
    single = zv.ndim == 1
    zs = zv.reshape(1, -1) if single else as_points(zv)
    out = np.asarray(logsumexp(_component_log_terms(spec, zs), axis=1), dtype=np.float64)
    return float(out[0]) if single else out


def mixture_score(spec: GaussianMixtureSpec, z: npt.ArrayLike) -> FloatArray:
    """Score ``sum_k r_k(z) (mu_k - z) / var_k`` with log-sum-exp responsibilities.

    Accepts a single point ``(d,)`` or a batch ``(N, d)`` and returns the same
    shape.
    """
    zv = np.asarray(z, dtype=np.float64)
    single = zv.ndim == 1
    zs = zv.reshape(1, -1) if single else as_points(zv)
    resp = softmax(_component_log_terms(spec, zs), axis=1)
    scaled = resp / spec.variances
    out = scaled @ spec.means - scaled.sum(axis=1, keepdims=True) * zs
    return np.asarray(out[0] if single else out, dtype=np.float64)


def _mixture_target(name: str, spec: GaussianMixtureSpec) -> TargetModel:
    return TargetModel(
        name=name,
        dim=spec.dim,
        sampler=functools.partial(sample_mixture, spec),
        spec=spec,
        score=functools.partial(mixture_score, spec),
    )


def grid_spec() -> GaussianMixtureSpec:
    """Equal-weight 5x5 grid with spacing 2 and component sigma 0.2."""
    centers = np.array(list(itertools.product(GRID_LEVELS, repeat=2)), dtype=np.float64)
    return GaussianMixtureSpec.equal_weights(centers, COMPONENT_SIGMA)


def gaussian_grid_25(n: int, seed: SeedLike) -> tuple[ParticleSet, GaussianMixtureSpec]:
    spec = grid_spec()
    return sample_mixture(spec, n, seed), spec


def mystery_centers() -> FloatArray:
    """Question-mark center table (version 1) in R^3.

    24 centers on a 240 degree arc of radius 1.5 around ``(0, 2)``, five on
    the stem down to ``y = -0.7`` and one dot at ``(0, -1.6)``. The third
    coordinate bulges as ``0.4 sin(pi s)`` along the hook and stem.
    """
    theta = np.linspace(5.0 * math.pi / 6.0, -math.pi / 2.0, 24)
    hook = np.column_stack([1.5 * np.cos(theta), 2.0 + 1.5 * np.sin(theta)])
    stem_y = np.linspace(0.5, -0.7, 6)[1:]
    stem = np.column_stack([np.zeros(5), stem_y])
    curve = np.vstack([hook, stem])
    s = np.arange(curve.shape[0]) / (curve.shape[0] - 1)
    curve3 = np.column_stack([curve, 0.4 * np.sin(math.pi * s)])
    dot = np.array([[0.0, -1.6, 0.0]])
    return np.vstack([curve3, dot])


def mystery_spec() -> GaussianMixtureSpec:
    return GaussianMixtureSpec.equal_weights(mystery_centers(), COMPONENT_SIGMA)


def mystery_mixture_30(n: int, seed: SeedLike) -> tuple[ParticleSet, GaussianMixtureSpec]:
    spec = mystery_spec()
    return sample_mixture(spec, n, seed), spec


def isotropic_gaussian(
    mean: npt.ArrayLike, variance: float = 1.0, *, name: str = "gaussian"
) -> TargetModel:
    """Single-component Gaussian target ``N(mean, variance I)`` with its score."""
    mu = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    spec = GaussianMixtureSpec(np.ones(1), mu[np.newaxis, :], np.array([float(variance)]))
    return _mixture_target(name, spec)


# ---------------------------------------------------------------------------
# Swiss roll and linear model
# ---------------------------------------------------------------------------


def swiss_roll(n: int, seed: SeedLike, spec: SwissRollSpec | None = None) -> ParticleSet:
    spec = spec or SwissRollSpec()
    _check_count(n)
    rng = make_rng(seed)
    t = rng.uniform(spec.t_min, spec.t_max, n)
    h = rng.uniform(0.0, spec.height, n)
    return ParticleSet(spec.scale * np.column_stack([t * np.cos(t), h, t * np.sin(t)]))


def sample_linear(spec: LinearGaussianSpec, n: int, seed: SeedLike) -> ParticleSet:
    _check_count(n)
    xi = make_rng(seed).standard_normal((n, spec.latent_dim))
    return ParticleSet(xi @ spec.B.T + spec.mu)


def linear_gaussian_model(d_out: int = 50, d_in: int = 25, seed: SeedLike = 0) -> TargetModel:
    """Random linear-Gaussian target: ``B ~ N(0, 0.25)``, ``mu ~ N(10, 1)`` entrywise.

    The covariance ``B B^T`` has rank ``d_in``, so no score is attached.
    """
    if d_out < 1 or d_in < 1:
        raise UsageError("d_out and d_in must be positive")
    rng = make_rng(seed)
    b = rng.normal(0.0, 0.5, size=(d_out, d_in))
    mu = rng.normal(10.0, 1.0, size=d_out)
    spec = LinearGaussianSpec(b, mu)
    return TargetModel(
        name=f"linear{d_out}",
        dim=d_out,
        sampler=functools.partial(sample_linear, spec),
        spec=spec,
    )


# ---------------------------------------------------------------------------
# Base distributions and helpers
# ---------------------------------------------------------------------------


def _reference_sample(target: TargetModel) -> FloatArray:
    return target.sample(REFERENCE_SAMPLE_SIZE, 0).points


def target_mean(target: TargetModel) -> FloatArray:
    """Exact mean for mixtures and linear models, else a reference-sample mean."""
    spec = target.spec
    if isinstance(spec, GaussianMixtureSpec):
        return spec.mean
    if isinstance(spec, LinearGaussianSpec):
        return spec.mu.copy()
    return np.asarray(_reference_sample(target).mean(axis=0), dtype=np.float64)


def target_extent(target: TargetModel) -> float:
    """Spread of the target along the first axis (component means when known)."""
    spec = target.spec
    if isinstance(spec, GaussianMixtureSpec) and spec.n_components > 1:
        axis0 = spec.means[:, 0]
    else:
        axis0 = _reference_sample(target)[:, 0]
    return float(axis0.max() - axis0.min())


def offset_vector(target: TargetModel) -> FloatArray:
    """Displacement of ``1.5 x extent`` along the first axis."""
    v = np.zeros(target.dim)
    v[0] = OFFSET_FACTOR * target_extent(target)
    return v


def offset_gaussian_base(
    target: TargetModel, offset: bool, n: int, seed: SeedLike
) -> ParticleSet:
    """Unit spherical Gaussian at the target mean, shifted by :func:`offset_vector` if ``offset``."""
    _check_count(n)
    center = target_mean(target)
    if offset:
        center = center + offset_vector(target)
    noise = make_rng(seed).standard_normal((n, target.dim))
    return ParticleSet(center + noise)


def fitted_gaussian_score(points: Points) -> ScoreFunction:
    """Score of the Gaussian with the sample mean and covariance of ``points``.

    Raises:
        DegenerateInputError: If the sample covariance is singular.
    """
    pts = as_points(points)
    if pts.shape[0] < 2:
        raise DegenerateInputError("fitting a Gaussian needs at least two points")
    mean = pts.mean(axis=0)
    cov = np.atleast_2d(np.cov(pts, rowvar=False))
    try:
        precision = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError("sample covariance is singular") from exc
    if not np.all(np.isfinite(precision)):
        raise DegenerateInputError("sample covariance is singular")

    def score(z: FloatArray) -> FloatArray:
        return np.asarray(-(np.asarray(z, dtype=np.float64) - mean) @ precision, dtype=np.float64)

    return score


# ---------------------------------------------------------------------------
# Registry and export
# ---------------------------------------------------------------------------

TARGET_NAMES = ("grid25", "mystery30", "swiss_roll", "linear50")


def get_target(name: str, *, seed: int = 0) -> TargetModel:
    """Look up a target by name; ``seed`` only affects the random ``linear50`` model.

    Raises:
        UsageError: For an unknown name.
    """
    key = name.strip().lower()
    if key == "grid25":
        return _mixture_target("grid25", grid_spec())
    if key == "mystery30":
        return _mixture_target("mystery30", mystery_spec())
    if key == "swiss_roll":
        spec = SwissRollSpec()
        return TargetModel(
            name="swiss_roll",
            dim=3,
            sampler=lambda n, s: swiss_roll(n, s, spec),
            spec=spec,
        )
    if key == "linear50":
        return linear_gaussian_model(50, 25, seed)
    raise UsageError(f"unknown target {name!r} (expected one of: {', '.join(TARGET_NAMES)})")


def _vector(values: npt.ArrayLike) -> str:
    return ", ".join(format_float(float(v)) for v in np.ravel(values))


def spec_text(target: TargetModel) -> str:
    """Human-readable ``key = value`` description of a target's parameters."""
    lines = [f"name = {target.name}", f"dim = {target.dim}"]
    spec = target.spec
    if isinstance(spec, GaussianMixtureSpec):
        if target.name == "mystery30":
            lines.append(f"table_version = {MYSTERY_TABLE_VERSION}")
        lines.append(f"components = {spec.n_components}")
        lines.append(f"weights = {_vector(spec.weights)}")
        lines.extend(f"means[{k}] = {_vector(m)}" for k, m in enumerate(spec.means))
        lines.append(f"variances = {_vector(spec.variances)}")
    elif isinstance(spec, LinearGaussianSpec):
        lines.append(f"latent_dim = {spec.latent_dim}")
        lines.append(f"mu = {_vector(spec.mu)}")
        lines.extend(f"B[{i}] = {_vector(row)}" for i, row in enumerate(spec.B))
    else:
        lines.extend(
            [
                f"scale = {format_float(spec.scale)}",
                f"t_min = {format_float(spec.t_min)}",
                f"t_max = {format_float(spec.t_max)}",
                f"height = {format_float(spec.height)}",
            ]
        )
    return "\n".join(lines) + "\n"


def write_spec_text(path: Path, target: TargetModel) -> None:
    atomic_write_text(Path(path), spec_text(target))
    _logger.info("wrote %s spec to %s", target.name, path)
