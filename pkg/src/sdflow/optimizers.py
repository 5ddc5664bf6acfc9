"""Apply a flow direction to particles with plain steps or AdaGrad."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from sdflow.errors import UsageError
from sdflow.kernel_core import FloatArray, ParticleSet, Points, as_points

DEFAULT_EPSILON = 1e-6


class OptimizerKind(enum.Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Optimizer kind plus the AdaGrad squared-gradient accumulator.

    The accumulator is keyed by particle index; it stays ``None`` for SGD and
    is created (all zeros) on the first AdaGrad step.
    """

    kind: OptimizerKind = OptimizerKind.SGD
    epsilon: float = DEFAULT_EPSILON
    accumulator: FloatArray | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def create(cls, adagrad: bool, epsilon: float = DEFAULT_EPSILON) -> OptimizerState:
        return cls(OptimizerKind.ADAGRAD if adagrad else OptimizerKind.SGD, epsilon)


def apply_step(
    state: OptimizerState,
    particles: Points,
    direction: FloatArray,
    eta: float,
) -> tuple[ParticleSet, OptimizerState]:
    """Move particles along ``direction``.

    SGD: ``Y' = Y + eta * g``. AdaGrad: ``A += g**2`` then
    ``Y' = Y + eta * g / (sqrt(A) + epsilon)``, elementwise.

    Args:
        state: Current optimizer state (not modified).
        particles: Particles ``(N, d)``.
        direction: Direction ``(N, d)``; zero rows leave particles and
            accumulator untouched.
        eta: Step size.

    Returns:
        The moved particles and the new state.

    Raises:
        UsageError: On a shape mismatch.
    """
    pts = as_points(particles)
    grad = np.asarray(direction, dtype=np.float64)
    if grad.shape != pts.shape:
        raise UsageError(f"direction shape {grad.shape} does not match particles {pts.shape}")

    if state.kind is OptimizerKind.SGD:
        return ParticleSet(pts + eta * grad), state

    acc = state.accumulator
    if acc is None:
        acc = np.zeros_like(pts)
    elif acc.shape != pts.shape:
        raise UsageError(f"accumulator shape {acc.shape} does not match particles {pts.shape}")
    acc = acc + grad * grad
    moved = pts + eta * grad / (np.sqrt(acc) + state.epsilon)
    return ParticleSet(moved), replace(state, accumulator=acc)
