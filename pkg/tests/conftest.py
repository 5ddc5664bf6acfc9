"""Shared fixtures for the sdflow test suite."""

from __future__ import annotations

import numpy as np
import pytest

from sdflow.harness import ConditionFlags, ExperimentConfig, Seeds


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_config() -> ExperimentConfig:
    """A grid25 run small enough for unit tests."""
    return ExperimentConfig(
        target="grid25",
        n_particles=64,
        iterations=5,
        batch_size=16,
        eta=0.1,
        flags=ConditionFlags(offset=True),
        seeds=Seeds(data=3, noise=4, frequency=5),
        n_frequencies=32,
        calibration_trials=5,
        log_every=0,
    )
