"""Noise-variance and step-size schedules indexed by iteration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from sdflow.errors import UsageError
from sdflow.kernel_core import check_sigma2


class ScheduleKind(enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass(frozen=True)
class ScheduleSpec:
    """Noise variance sigma2(t) and step size eta(t) over ``total_steps`` steps.

    Attributes:
        kind: Constant or cosine noise.
        sigma2_max: Starting (cosine) or fixed (constant) noise variance.
        sigma2_min: Final noise variance of the cosine schedule.
        eta: Step size, constant over the run.
        total_steps: Number of iterations the schedule covers.
    """

    kind: ScheduleKind
    sigma2_max: float
    eta: float
    total_steps: int
    sigma2_min: float | None = None

    def __post_init__(self) -> None:
        check_sigma2(self.sigma2_max)
        if not self.eta > 0.0:
            raise UsageError(f"eta must be positive, got {self.eta}")
        if self.total_steps < 1:
            raise UsageError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.kind is ScheduleKind.COSINE:
            if self.sigma2_min is None:
                raise UsageError("a cosine schedule needs sigma2_min")
            check_sigma2(self.sigma2_min)
            if self.sigma2_min > self.sigma2_max:
                raise UsageError("sigma2_min must not exceed sigma2_max")

    @classmethod
    def constant(cls, sigma2: float, eta: float, total_steps: int) -> ScheduleSpec:
        return cls(ScheduleKind.CONSTANT, sigma2, eta, total_steps)

    @classmethod
    def cosine(
        cls, sigma2_max: float, sigma2_min: float, eta: float, total_steps: int
    ) -> ScheduleSpec:
        return cls(ScheduleKind.COSINE, sigma2_max, eta, total_steps, sigma2_min)

    @property
    def t_max(self) -> float:
        """End of the continuous cosine time axis, ``2/pi * acos(min/max)``."""
        if self.kind is not ScheduleKind.COSINE or self.sigma2_min is None:
            return 0.0
        return 2.0 / math.pi * math.acos(self.sigma2_min / self.sigma2_max)


def _check_step(spec: ScheduleSpec, step: int) -> None:
    if not 0 <= step < spec.total_steps:
        raise UsageError(f"step {step} outside [0, {spec.total_steps})")


def noise_at(spec: ScheduleSpec, step: int) -> float:
    """Noise variance at a step.

    The cosine schedule maps steps linearly onto ``[0, t_max]`` (step 0 to
    ``t = 0``, the last step to ``t = t_max``) and evaluates
    ``sigma2_max * cos(pi t / 2)``.

    Raises:
        UsageError: If ``step`` is outside ``[0, total_steps)``.
    """
    _check_step(spec, step)
    if spec.kind is ScheduleKind.CONSTANT:
        return spec.sigma2_max
    assert spec.sigma2_min is not None
    if spec.total_steps == 1 or step == 0:
        return spec.sigma2_max
    if step == spec.total_steps - 1:
        return spec.sigma2_min
    t = spec.t_max * step / (spec.total_steps - 1)
    value = spec.sigma2_max * math.cos(math.pi * t / 2.0)
    return min(max(value, spec.sigma2_min), spec.sigma2_max)


def step_at(spec: ScheduleSpec, step: int) -> float:
    """Step size at a step (constant in this toolkit)."""
    _check_step(spec, step)
    return spec.eta
