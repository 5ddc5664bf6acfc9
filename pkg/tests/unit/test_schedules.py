"""Tests for noise and step-size schedules."""

from __future__ import annotations

import math

import pytest

from sdflow.errors import UsageError
from sdflow.schedules import ScheduleKind, ScheduleSpec, noise_at, step_at


def test_constant_schedule() -> None:
    spec = ScheduleSpec.constant(0.3, 0.1, 10)
    assert spec.kind is ScheduleKind.CONSTANT
    assert {noise_at(spec, t) for t in range(10)} == {0.3}
    assert step_at(spec, 9) == 0.1


def test_cosine_endpoints_are_exact() -> None:
    spec = ScheduleSpec.cosine(10.0, 0.5, 0.1, 1000)
    assert noise_at(spec, 0) == 10.0
    assert noise_at(spec, 999) == 0.5


def test_cosine_midpoint() -> None:
    spec = ScheduleSpec.cosine(10.0, 0.5, 0.1, 3)
    assert spec.t_max == pytest.approx(2.0 / math.pi * math.acos(0.05))
    assert noise_at(spec, 1) == pytest.approx(7.2457, abs=1e-4)


def test_cosine_is_monotone_within_bounds() -> None:
    spec = ScheduleSpec.cosine(4.0, 0.5, 0.1, 200)
    values = [noise_at(spec, t) for t in range(200)]
    assert all(b <= a for a, b in zip(values, values[1:], strict=False))
    assert all(0.5 <= v <= 4.0 for v in values)


def test_single_step_cosine_uses_maximum() -> None:
    assert noise_at(ScheduleSpec.cosine(2.0, 1.0, 0.1, 1), 0) == 2.0


def test_equal_bounds_are_constant() -> None:
    spec = ScheduleSpec.cosine(1.0, 1.0, 0.1, 5)
    assert spec.t_max == 0.0
    assert [noise_at(spec, t) for t in range(5)] == [1.0] * 5


@pytest.mark.parametrize("step", [-1, 10])
def test_step_out_of_range(step: int) -> None:
    spec = ScheduleSpec.constant(1.0, 0.1, 10)
    with pytest.raises(UsageError):
        noise_at(spec, step)
    with pytest.raises(UsageError):
        step_at(spec, step)


@pytest.mark.parametrize(
    ("kwargs", "match"),
    [
        ({"sigma2_max": 1.0, "sigma2_min": 2.0}, "must not exceed"),
        ({"sigma2_max": 0.0, "sigma2_min": 0.0}, ""),
        ({"sigma2_max": 1.0, "sigma2_min": 0.5, "eta": 0.0}, "eta"),
        ({"sigma2_max": 1.0, "sigma2_min": 0.5, "total_steps": 0}, "total_steps"),
    ],
)
def test_invalid_cosine_specs(kwargs: dict[str, float], match: str) -> None:
    params: dict[str, float] = {"eta": 0.1, "total_steps": 10, **kwargs}
    with pytest.raises(UsageError, match=match):
        ScheduleSpec.cosine(
            params["sigma2_max"], params["sigma2_min"], params["eta"], int(params["total_steps"])
        )


def test_cosine_requires_minimum() -> None:
    with pytest.raises(UsageError, match="sigma2_min"):
        ScheduleSpec(ScheduleKind.COSINE, 1.0, 0.1, 10)
