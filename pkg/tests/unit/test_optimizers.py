"""Tests for plain and AdaGrad particle steps."""

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdflow.errors import UsageError
from sdflow.optimizers import DEFAULT_EPSILON, OptimizerKind, OptimizerState, apply_step


@pytest.fixture
def particles() -> np.ndarray:
    return np.array([[0.0, 1.0], [2.0, -3.0], [0.5, 0.5]])


def test_sgd_step(particles: np.ndarray) -> None:
    direction = np.array([[1.0, 0.0], [0.0, -2.0], [0.5, 0.5]])
    moved, state = apply_step(OptimizerState.create(adagrad=False), particles, direction, 0.1)
    assert_allclose(moved.points, particles + 0.1 * direction)
    assert state.accumulator is None


@pytest.mark.parametrize("adagrad", [False, True])
def test_zero_direction_is_identity(particles: np.ndarray, adagrad: bool) -> None:
    moved, _ = apply_step(OptimizerState.create(adagrad), particles, np.zeros_like(particles), 0.5)
    assert_array_equal(moved.points, particles)


@pytest.mark.parametrize("adagrad", [False, True])
def test_zero_step_size_is_identity(particles: np.ndarray, adagrad: bool) -> None:
    moved, _ = apply_step(OptimizerState.create(adagrad), particles, np.ones_like(particles), 0.0)
    assert_array_equal(moved.points, particles)


def test_adagrad_first_steps_scale_by_sign(particles: np.ndarray) -> None:
    direction = np.array([[3.0, -0.2], [-50.0, 1.0], [0.01, -7.0]])
    state = OptimizerState.create(adagrad=True)
    assert state.kind is OptimizerKind.ADAGRAD
    assert state.epsilon == DEFAULT_EPSILON

    first, state = apply_step(state, particles, direction, 0.1)
    assert_allclose(first.points - particles, 0.1 * np.sign(direction), atol=1e-4)

    second, state = apply_step(state, first.points, direction, 0.1)
    assert_allclose(
        second.points - first.points, 0.1 / math.sqrt(2.0) * np.sign(direction), atol=1e-4
    )
    assert state.accumulator is not None
    assert_allclose(state.accumulator, 2.0 * direction**2)


def test_state_is_not_mutated(particles: np.ndarray) -> None:
    state = OptimizerState.create(adagrad=True)
    _, new_state = apply_step(state, particles, np.ones_like(particles), 0.1)
    assert state.accumulator is None
    assert new_state is not state


def test_shape_mismatch(particles: np.ndarray) -> None:
    with pytest.raises(UsageError):
        apply_step(OptimizerState.create(False), particles, np.zeros((2, 2)), 0.1)
    state = OptimizerState(OptimizerKind.ADAGRAD, accumulator=np.zeros((2, 2)))
    with pytest.raises(UsageError):
        apply_step(state, particles, np.zeros_like(particles), 0.1)


def test_epsilon_must_be_positive() -> None:
    with pytest.raises(UsageError):
        OptimizerState.create(adagrad=True, epsilon=0.0)
