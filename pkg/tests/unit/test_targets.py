"""Tests for the toy targets and base distributions."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdflow.errors import DegenerateInputError, UsageError
from sdflow.metrics import nn_distances
from sdflow.targets import (
    COMPONENT_SIGMA,
    GaussianMixtureSpec,
    SwissRollSpec,
    TARGET_NAMES,
    fitted_gaussian_score,
    gaussian_grid_25,
    get_target,
    isotropic_gaussian,
    linear_gaussian_model,
    mixture_log_density,
    mixture_score,
    mystery_centers,
    mystery_mixture_30,
    offset_gaussian_base,
    offset_vector,
    spec_text,
    swiss_roll,
    target_mean,
    write_spec_text,
)


class TestGaussianGrid:
    def test_shape_and_determinism(self) -> None:
        first, spec = gaussian_grid_25(1000, 0)
        second, _ = gaussian_grid_25(1000, 0)
        assert first.points.shape == (1000, 2)
        assert_array_equal(first.points, second.points)
        assert spec.n_components == 25
        assert not np.array_equal(first.points, gaussian_grid_25(1000, 1)[0].points)

    def test_centers_and_width(self) -> None:
        _, spec = gaussian_grid_25(1, 0)
        assert sorted(set(spec.means[:, 0])) == [-4.0, -2.0, 0.0, 2.0, 4.0]
        assert_allclose(spec.variances, COMPONENT_SIGMA**2)
        assert_allclose(spec.weights.sum(), 1.0)

    def test_samples_stay_near_a_center(self) -> None:
        pts, spec = gaussian_grid_25(5000, 3)
        nearest = nn_distances(pts.points, spec.means)
        assert nearest.max() < 6.0 * COMPONENT_SIGMA


class TestMysteryMixture:
    def test_thirty_components_in_three_dimensions(self) -> None:
        centers = mystery_centers()
        assert centers.shape == (30, 3)
        assert len({tuple(c) for c in centers}) == 30

    def test_dot_sits_below_the_stem(self) -> None:
        centers = mystery_centers()
        assert_allclose(centers[-1], [0.0, -1.6, 0.0])
        assert np.all(centers[24:29, 0] == 0.0)

    def test_sample_shape(self) -> None:
        pts, spec = mystery_mixture_30(200, 9)
        assert pts.points.shape == (200, 3)
        assert spec.dim == 3


def test_swiss_roll_radius_and_height() -> None:
    spec = SwissRollSpec()
    pts = swiss_roll(2000, 4, spec).points
    radius = np.hypot(pts[:, 0], pts[:, 2])
    assert radius.min() >= spec.scale * spec.t_min - 1e-9
    assert radius.max() <= spec.scale * spec.t_max + 1e-9
    assert pts[:, 1].min() >= 0.0
    assert pts[:, 1].max() <= spec.scale * spec.height


class TestMixtureScore:
    def test_matches_finite_differences(self, rng: np.random.Generator) -> None:
        spec = get_target("grid25").spec
        assert isinstance(spec, GaussianMixtureSpec)
        h = 1e-5
        for z in rng.uniform(-4.0, 4.0, size=(20, 2)):
            fd = np.array(
                [
                    (mixture_log_density(spec, z + h * e) - mixture_log_density(spec, z - h * e)) / (2 * h)
                    for e in np.eye(2)
                ]
            )
            analytic = mixture_score(spec, z)
            assert np.linalg.norm(analytic - fd) <= 1e-5 * max(1.0, np.linalg.norm(analytic))

    def test_symmetric_pair_cancels(self) -> None:
        spec = GaussianMixtureSpec.equal_weights([[-1.0, 0.0], [1.0, 0.0]], 0.5)
        assert_allclose(mixture_score(spec, [0.0, 0.0]), [0.0, 0.0], atol=1e-15)

    def test_single_component_is_linear(self) -> None:
        target = isotropic_gaussian([1.0, 2.0], variance=4.0)
        assert target.score is not None
        assert_allclose(target.score(np.array([[3.0, 2.0]])), [[-0.5, 0.0]])

    def test_far_from_all_components_is_finite(self) -> None:
        spec = get_target("grid25").spec
        assert isinstance(spec, GaussianMixtureSpec)
        assert np.all(np.isfinite(mixture_score(spec, np.array([[1e3, -1e3]]))))

    def test_batch_and_single_agree(self, rng: np.random.Generator) -> None:
        spec = get_target("mystery30").spec
        assert isinstance(spec, GaussianMixtureSpec)
        zs = rng.normal(size=(5, 3))
        batch = mixture_score(spec, zs)
        assert_allclose(np.vstack([mixture_score(spec, z) for z in zs]), batch)

    def test_invalid_weights(self) -> None:
        with pytest.raises(UsageError):
            GaussianMixtureSpec(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones(2))
        with pytest.raises(UsageError):
            GaussianMixtureSpec(np.array([1.0]), np.zeros((1, 1)), np.zeros(1))


def test_linear_model_moments() -> None:
    target = linear_gaussian_model(d_out=10, d_in=4, seed=2)
    spec = target.spec
    pts = target.sample(20000, 5).points
    assert pts.shape == (20000, 10)
    assert not target.has_score
    assert_allclose(pts.mean(axis=0), spec.mu, atol=0.05)  # type: ignore[union-attr]
    cov = np.cov(pts, rowvar=False)
    assert np.linalg.norm(cov - spec.covariance) / np.linalg.norm(spec.covariance) < 0.05  # type: ignore[union-attr]


def test_linear50_registry_entry() -> None:
    target = get_target("linear50")
    assert target.dim == 50
    assert target.spec.latent_dim == 25  # type: ignore[union-attr]
    assert_array_equal(target.spec.B, get_target("linear50").spec.B)  # type: ignore[union-attr]


class TestOffsetBase:
    def test_grid_offset_is_one_and_a_half_extents(self) -> None:
        target = get_target("grid25")
        assert_allclose(offset_vector(target), [12.0, 0.0])
        base = offset_gaussian_base(target, True, 4000, 1).points
        assert_allclose(base.mean(axis=0), [12.0, 0.0], atol=0.1)

    def test_no_offset_centers_on_target_mean(self) -> None:
        target = get_target("mystery30")
        base = offset_gaussian_base(target, False, 4000, 1).points
        assert_allclose(base.mean(axis=0), target_mean(target), atol=0.1)
        assert_allclose(base.std(axis=0), 1.0, atol=0.05)


class TestFittedScore:
    def test_recovers_gaussian_score(self, rng: np.random.Generator) -> None:
        pts = rng.normal(loc=3.0, scale=2.0, size=(50000, 1))
        score = fitted_gaussian_score(pts)
        assert score(np.array([[3.0]]))[0, 0] == pytest.approx(0.0, abs=0.01)
        assert score(np.array([[5.0]]))[0, 0] == pytest.approx(-0.5, abs=0.02)

    def test_degenerate_inputs(self) -> None:
        with pytest.raises(DegenerateInputError):
            fitted_gaussian_score([[1.0, 2.0]])
        with pytest.raises(DegenerateInputError):
            fitted_gaussian_score(np.ones((10, 2)))


class TestRegistry:
    @pytest.mark.parametrize("name", TARGET_NAMES)
    def test_every_name_samples(self, name: str) -> None:
        target = get_target(name)
        assert target.sample(8, 0).dim == target.dim

    def test_unknown_name(self) -> None:
        with pytest.raises(UsageError, match="unknown target"):
            get_target("banana")

    def test_sample_count_must_be_positive(self) -> None:
        with pytest.raises(UsageError):
            get_target("grid25").sample(0, 0)


def test_spec_text(tmp_path: Path) -> None:
    text = spec_text(get_target("mystery30"))
    assert "table_version = 1" in text
    assert "components = 30" in text
    assert text.count("means[") == 30
    roll = spec_text(get_target("swiss_roll"))
    assert "t_min = 4.71238898" in roll
    path = tmp_path / "spec.txt"
    write_spec_text(path, get_target("grid25"))
    assert path.read_text(encoding="utf-8").startswith("name = grid25\ndim = 2\n")
