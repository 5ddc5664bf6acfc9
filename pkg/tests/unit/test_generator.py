"""Tests for the linear generator and the model-optimization loop."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdflow.errors import ConfigError, UsageError
from sdflow.flows import FlowKind, FlowMethod
from sdflow.generator import (
    LinearGenerator,
    ModelOptSettings,
    generate,
    init_linear_generator,
    model_opt_loop,
    model_report,
    nn_noise_sigma2,
    regress_step,
    regression_gradient,
    regression_loss,
    run_model_optimization,
    write_model_outputs,
)
from sdflow.schedules import ScheduleSpec
from sdflow.targets import (
    LinearGaussianSpec,
    TargetModel,
    isotropic_gaussian,
    linear_gaussian_model,
)


class TestLinearGenerator:
    def test_generate_one_dimensional(self) -> None:
        g = LinearGenerator(np.array([[2.0]]), np.array([3.0]))
        assert_array_equal(generate(g, [[5.0]]).points, [[13.0]])

    def test_generate_batch(self) -> None:
        g = LinearGenerator(np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]), np.array([0.0, 1.0, -1.0]))
        out = generate(g, [[1.0, 1.0], [0.0, -1.0]]).points
        assert_allclose(out, [[1.0, 3.0, 1.0], [0.0, -1.0, -2.0]])

    def test_latent_dimension_checked(self) -> None:
        g = init_linear_generator(3, 2, seed=0)
        with pytest.raises(UsageError):
            generate(g, np.zeros((4, 3)))

    def test_init(self) -> None:
        g = init_linear_generator(50, 25, seed=1)
        assert g.B_hat.shape == (50, 25)
        assert_array_equal(g.mu_hat, np.zeros(50))
        assert g.B_hat.std() == pytest.approx(0.1, rel=0.1)
        assert_array_equal(g.B_hat, init_linear_generator(50, 25, seed=1).B_hat)

    def test_mismatched_parameters(self) -> None:
        with pytest.raises(UsageError):
            LinearGenerator(np.zeros((3, 2)), np.zeros(2))


class TestRegression:
    def test_hand_example(self) -> None:
        g = LinearGenerator(np.array([[1.0]]), np.array([1.0]))
        assert regression_loss(g, [[1.0]], [[0.0]]) == 2.0
        updated = regress_step(g, [[1.0]], [[0.0]], lam=0.25)
        assert_allclose(updated.B_hat, [[0.5]])
        assert_allclose(updated.mu_hat, [0.5])

    def test_zero_residual_is_fixed_point(self, rng: np.random.Generator) -> None:
        g = init_linear_generator(4, 3, seed=2)
        xi = rng.normal(size=(10, 3))
        updated = regress_step(g, xi, generate(g, xi).points, lam=0.5)
        assert_array_equal(updated.B_hat, g.B_hat)
        assert_array_equal(updated.mu_hat, g.mu_hat)

    def test_gradient_matches_finite_differences(self, rng: np.random.Generator) -> None:
        g = init_linear_generator(3, 2, seed=4)
        xi, y = rng.normal(size=(7, 2)), rng.normal(size=(7, 3))
        grad_b, grad_mu = regression_gradient(g, xi, y)
        h = 1e-6
        for i in range(3):
            for j in range(2):
                bump = np.zeros_like(g.B_hat)
                bump[i, j] = h
                plus = regression_loss(LinearGenerator(g.B_hat + bump, g.mu_hat), xi, y)
                minus = regression_loss(LinearGenerator(g.B_hat - bump, g.mu_hat), xi, y)
                assert abs((plus - minus) / (2 * h) - grad_b[i, j]) < 1e-6
            bump_mu = np.zeros(3)
            bump_mu[i] = h
            plus = regression_loss(LinearGenerator(g.B_hat, g.mu_hat + bump_mu), xi, y)
            minus = regression_loss(LinearGenerator(g.B_hat, g.mu_hat - bump_mu), xi, y)
            assert abs((plus - minus) / (2 * h) - grad_mu[i]) < 1e-6

    def test_lambda_must_be_positive(self) -> None:
        g = init_linear_generator(1, 1, seed=0)
        with pytest.raises(UsageError):
            regress_step(g, [[1.0]], [[0.0]], lam=0.0)

    def test_target_shape_checked(self) -> None:
        g = init_linear_generator(2, 1, seed=0)
        with pytest.raises(UsageError):
            regression_loss(g, [[1.0], [2.0]], [[0.0, 0.0]])


def test_nn_noise_sigma2_scalings() -> None:
    assert nn_noise_sigma2([[0.0]], [[2.0], [5.0]], 10.0, "variance") == pytest.approx(20.0)
    assert nn_noise_sigma2([[0.0]], [[2.0], [5.0]], 10.0, "std") == pytest.approx(400.0)
    with pytest.raises(UsageError):
        nn_noise_sigma2([[0.0]], [[2.0]], 10.0, "both")  # type: ignore[arg-type]


def test_noise_multiplier_sets_std_by_default(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.INFO, logger="sdflow.generator"):
        sigma2 = nn_noise_sigma2([[0.0]], [[2.0], [5.0]])
    assert sigma2 == pytest.approx(400.0)
    assert ModelOptSettings().noise_applies_to == "std"
    assert "noise sigma2 400.0000 (std scaling; reference level 700)" in caplog.text


class TestModelOptLoop:
    @pytest.fixture
    def linear_target(self) -> TargetModel:
        return linear_gaussian_model(d_out=4, d_in=2, seed=0)

    def test_zero_steps_returns_initial(self, linear_target: TargetModel) -> None:
        g0 = init_linear_generator(4, 2, seed=1)
        g, record = model_opt_loop(
            linear_target, g0, FlowMethod(FlowKind.KERNEL_SD), ScheduleSpec.constant(1.0, 1.0, 1), 0.1, 8, 0, seed=0
        )
        assert g is g0
        assert record.rows == []

    @pytest.mark.parametrize(
        ("overrides", "match"),
        [
            ({"g0": init_linear_generator(3, 2, seed=1)}, "dim"),
            ({"batch": 0}, "batch"),
            ({"batch": 300}, "batch"),
            ({"steps": 20}, "schedule"),
            ({"flow": FlowMethod(FlowKind.SVGD)}, "score"),
            ({"lam": 0.0}, "lambda"),
        ],
    )
    def test_invalid_settings(
        self, linear_target: TargetModel, overrides: dict[str, object], match: str
    ) -> None:
        kwargs: dict[str, object] = {
            "target": linear_target,
            "g0": init_linear_generator(4, 2, seed=1),
            "flow": FlowMethod(FlowKind.KERNEL_SD),
            "schedule": ScheduleSpec.constant(1.0, 1.0, 10),
            "lam": 0.1,
            "batch": 16,
            "steps": 10,
            "seed": 0,
            "n_target": 256,
        }
        kwargs.update(overrides)
        with pytest.raises(ConfigError, match=match):
            model_opt_loop(**kwargs)  # type: ignore[arg-type]

    def test_deterministic_trace(self, linear_target: TargetModel) -> None:
        def run() -> tuple[LinearGenerator, list[float]]:
            g, record = model_opt_loop(
                linear_target,
                init_linear_generator(4, 2, seed=1),
                FlowMethod(FlowKind.KERNEL_SD),
                ScheduleSpec.constant(2.0, 1.0, 15),
                0.5,
                32,
                15,
                seed=3,
                n_target=128,
            )
            return g, [row["regression_loss"] for row in record.rows]

        (g1, losses1), (g2, losses2) = run(), run()
        assert_array_equal(g1.B_hat, g2.B_hat)
        assert losses1 == losses2
        assert len(losses1) == 15

    def test_analytic_flow_learns_gaussian_mean(self) -> None:
        target = isotropic_gaussian(5.0)
        g, record = model_opt_loop(
            target,
            LinearGenerator(np.array([[0.5]]), np.array([0.0])),
            FlowMethod(FlowKind.ANALYTIC_SD),
            ScheduleSpec.constant(1e-6, 0.5, 2000),
            0.1,
            256,
            2000,
            seed=0,
            n_target=4096,
            log_every=0,
        )
        assert abs(g.mu_hat[0] - 5.0) < 0.1
        assert record.rows[-1]["mean_error"] < 0.02


class TestModelReport:
    def test_exact_generator(self) -> None:
        spec = LinearGaussianSpec(np.array([[1.0, 0.0], [0.5, 2.0], [0.0, 1.0]]), np.array([1.0, 2.0, 3.0]))
        report = model_report(spec, LinearGenerator(spec.B, spec.mu), n=256, seed=0)
        assert report.relative_mean_error == 0.0
        assert report.covariance_correlation == pytest.approx(1.0)
        assert report.mean_pairs.shape == (3, 2)
        assert report.covariance_pairs.shape == (9, 2)
        assert report.nn_generated.shape == (256,)
        assert report.overfit_ratio > 0.0

    def test_dimension_mismatch(self) -> None:
        spec = LinearGaussianSpec(np.eye(2), np.zeros(2))
        with pytest.raises(UsageError):
            model_report(spec, init_linear_generator(3, 2, seed=0))


def test_run_and_write_small_experiment(tmp_path: Path) -> None:
    settings = ModelOptSettings(d_out=6, d_in=3, batch=64, steps=20, lam=0.064, n_target=256)
    result = run_model_optimization(settings)
    assert result.sigma2 > 0.0
    assert len(result.record.rows) == 20
    assert result.generator.B_hat.shape == (6, 3)
    write_model_outputs(tmp_path, result)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {
        "B_hat.csv",
        "mu_hat.csv",
        "trajectory.csv",
        "mean_pairs.csv",
        "covariance_pairs.csv",
        "nn_distances.csv",
        "summary.csv",
    }
    assert (tmp_path / "trajectory.csv").read_text(encoding="utf-8").count("\n") == 21
    assert len((tmp_path / "mu_hat.csv").read_text(encoding="utf-8").splitlines()) == 7
