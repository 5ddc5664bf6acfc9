"""Gaussian kernel evaluation, pairwise distances and bandwidth selection.

This is the numeric substrate shared by every flow. Point sets are ``(N, d)``
float arrays wrapped in :class:`ParticleSet`; every operation also accepts a
plain array-like, where a 1-D array is read as ``N`` points in one dimension.

Example:
    >>> from sdflow.kernel_core import ParticleSet, median_bandwidth
    >>> median_bandwidth(ParticleSet.from_array([[0.0], [1.0], [2.0]]))
    1.4426950408889634
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist, pdist
from scipy.special import softmax

from sdflow._io import FLOAT_FORMAT, atomic_write_text
from sdflow.errors import DegenerateInputError, UsageError

_logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

LOG_BASES: dict[str, float] = {"e": math.e, "2": 2.0, "10": 10.0}


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """An ordered collection of ``count`` points in ``dim`` dimensions."""

    points: FloatArray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2:
            raise UsageError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise UsageError(f"a particle set needs N >= 1 and d >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise UsageError("particle coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_array(cls, values: npt.ArrayLike) -> ParticleSet:
        """Build a set from an array-like; 1-D input becomes a column."""
        return cls(as_points(values))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return self.count

    def subset(self, index: npt.ArrayLike) -> ParticleSet:
        """Return the rows selected by ``index`` as a new set."""
        return ParticleSet(self.points[np.asarray(index)])

    def translated(self, offset: npt.ArrayLike) -> ParticleSet:
        return ParticleSet(self.points + np.asarray(offset, dtype=np.float64))


Points = ParticleSet | npt.ArrayLike


@dataclass(frozen=True)
class KernelConfig:
    """Squared bandwidth ``sigma2`` of the Gaussian kernel."""

    sigma2: float

    def __post_init__(self) -> None:
        check_sigma2(self.sigma2)

    @classmethod
    def from_median_heuristic(cls, source: Points, log_base: str = "e") -> KernelConfig:
        """Bandwidth from :func:`median_bandwidth` of the source particles."""
        return cls(median_bandwidth(source, log_base=log_base))


def as_points(values: Points) -> FloatArray:
    """Return ``values`` as a float ``(N, d)`` array.

    Raises:
        UsageError: If the input is not 1-D or 2-D.
    """
    if isinstance(values, ParticleSet):
        return values.points
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2:
        raise UsageError(f"expected a 1-D or 2-D array of points, got shape {arr.shape}")
    return arr


def check_sigma2(sigma2: float) -> float:
    """Validate a squared bandwidth and return it as a float."""
    value = float(sigma2)
    if not value > 0.0 or not math.isfinite(value):
        raise UsageError(f"sigma2 must be a positive finite number, got {sigma2!r}")
    return value


def check_same_dim(*arrays: FloatArray) -> int:
    """Return the shared column count, raising on a mismatch."""
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise UsageError(f"dimension mismatch between point sets: {sorted(dims)}")
    return dims.pop()


def gaussian_kernel(z: npt.ArrayLike, x: npt.ArrayLike, sigma2: float) -> float:
    """Evaluate ``exp(-||z - x||^2 / (2 sigma2))`` for two points.

    Args:
        z: First point, shape ``(d,)``.
        x: Second point, shape ``(d,)``.
        sigma2: Squared bandwidth, must be positive.

    Returns:
        Kernel value in ``(0, 1]`` (may underflow to 0 for distant points).

    Raises:
        UsageError: On a dimension mismatch or non-positive ``sigma2``.
    """
    s2 = check_sigma2(sigma2)
    zv = np.atleast_1d(np.asarray(z, dtype=np.float64))
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if zv.ndim != 1 or zv.shape != xv.shape:
        raise UsageError(f"points must share one dimension, got {zv.shape} and {xv.shape}")
    diff = zv - xv
    return float(np.exp(-float(diff @ diff) / (2.0 * s2)))


def pairwise_sq_dists(a: Points, b: Points) -> FloatArray:
    """Squared Euclidean distances between every row of ``a`` and ``b``.

    Returns:
        ``(N_a, N_b)`` array with entry ``(i, j) = ||a_i - b_j||^2``.
    """
    pa, pb = as_points(a), as_points(b)
    check_same_dim(pa, pb)
    return np.asarray(cdist(pa, pb, metric="sqeuclidean"), dtype=np.float64)


def kernel_matrix(z: Points, x: Points, sigma2: float) -> FloatArray:
    """Unnormalized Gaussian kernel values ``K(z_i, x_j)``."""
    s2 = check_sigma2(sigma2)
    return np.exp(-pairwise_sq_dists(z, x) / (2.0 * s2))


def kernel_weights(z: Points, x: Points, sigma2: float) -> FloatArray:
    """Row-normalized kernel weights ``K(z_i, x_j) / sum_j K(z_i, x_j)``.

    The exponent is max-shifted per row, so every row sums to one even when
    all raw kernel values underflow.
    """
    s2 = check_sigma2(sigma2)
    logits = -pairwise_sq_dists(z, x) / (2.0 * s2)
    return np.asarray(softmax(logits, axis=1), dtype=np.float64)


def median_bandwidth(source: Points, log_base: str = "e") -> float:
    """Median heuristic ``2 * median(D^2(y, y')) / log(N + 1)``.

    The median runs over distinct pairs only (self-distances excluded); an
    even count averages the two central values.

    Args:
        source: Source particles, ``N >= 2``.
        log_base: ``"e"`` (default), ``"2"`` or ``"10"``.

    Raises:
        DegenerateInputError: If ``N < 2`` or the median distance is zero.
        UsageError: For an unknown ``log_base``.
    """
    pts = as_points(source)
    n = pts.shape[0]
    if n < 2:
        raise DegenerateInputError("median bandwidth needs at least two points")
    try:
        base = LOG_BASES[log_base]
    except KeyError:
        raise UsageError(
            f"log_base must be one of {sorted(LOG_BASES)}, got {log_base!r}"
        ) from None
    med = float(np.median(pdist(pts, metric="sqeuclidean")))
    if med <= 0.0:
        raise DegenerateInputError("median pairwise distance is zero")
    sigma2 = 2.0 * med / math.log(n + 1, base)
    _logger.debug("median bandwidth: N=%d median D^2=%g sigma2=%g", n, med, sigma2)
    return sigma2


def write_particles_csv(path: Path, particles: Points, *, header: bool = False) -> None:
    """Write one point per row as comma-separated decimals.

    Args:
        path: Destination file (written atomically).
        particles: Points to write.
        header: Prepend an ``x0,x1,...`` header row.
    """
    pts = as_points(particles)
    buffer = io.StringIO()
    head = ",".join(f"x{i}" for i in range(pts.shape[1])) if header else ""
    np.savetxt(buffer, pts, fmt=FLOAT_FORMAT, delimiter=",", header=head, comments="")
    atomic_write_text(Path(path), buffer.getvalue())


def read_particles_csv(path: Path) -> ParticleSet:
    """Read a particle CSV written by :func:`write_particles_csv`.

    A first line starting with ``x`` is treated as the optional header.
    """
    text = Path(path).read_text(encoding="utf-8")
    skip = 1 if text.lstrip().startswith("x") else 0
    data: Any = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=skip, ndmin=2)
    return ParticleSet(data)
