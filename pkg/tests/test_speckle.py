"""Speckle sampler statistics against analytic moments, scipy's
distribution machinery, and quadrature; plus the RNG stream contracts."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from ocsd.rng import (
    Stream,
    derive_seed,
    derive_seed_array,
    normal_block,
    uniform_block,
)
from ocsd.speckle import SpeckleField, apply_speckle, gamma_pdf, sample_gamma_speckle


class TestRngStreams:
    def test_scalar_and_vector_paths_match(self):
        s = Stream(12345)
        scalar = [s.uniform() for _ in range(64)]
        block = uniform_block(12345, 1, 64)
        np.testing.assert_array_equal(np.asarray(scalar), block)

    def test_derive_seed_vectorized_matches_scalar(self):
        fields = np.arange(100, dtype=np.uint64)
        vec = derive_seed_array(99, fields)
        scalar = np.array([derive_seed(99, int(k)) for k in range(100)], dtype=np.uint64)
        np.testing.assert_array_equal(vec, scalar)

    def test_derive_seed_is_position_sensitive(self):
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)

    def test_uniforms_in_half_open_unit_interval(self):
        u = uniform_block(7, 1, 100000)
        assert u.min() > 0.0 and u.max() <= 1.0

    def test_normals_have_unit_moments(self):
        z = normal_block(11, 1, 200000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_shuffle_deterministic(self):
        a = list(range(20))
        b = list(range(20))
        Stream(5).shuffle(a)
        Stream(5).shuffle(b)
        assert a == b and a != list(range(20))


class TestGammaSampler:
    @pytest.mark.parametrize("looks", [1, 2, 4, 8])
    def test_moments_at_one_million_draws(self, looks):
        field = sample_gamma_speckle(1000, 1000, looks, seed=2024)
        assert abs(field.values.mean() - 1.0) < 0.005
        assert abs(field.values.var() - 1.0 / looks) < 0.05 / looks

    def test_all_values_strictly_positive(self):
        field = sample_gamma_speckle(200, 200, 1, seed=3)
        assert field.values.min() > 0.0

    def test_exponential_median_at_l1(self):
        # L=1 is Exponential(1): P(N > ln 2) = 0.5
        field = sample_gamma_speckle(1000, 1000, 1, seed=17)
        frac = float((field.values > math.log(2.0)).mean())
        assert abs(frac - 0.5) < 0.002

    def test_same_seed_identical_different_seed_distinct(self):
        a = sample_gamma_speckle(64, 64, 2, seed=42)
        b = sample_gamma_speckle(64, 64, 2, seed=42)
        c = sample_gamma_speckle(64, 64, 2, seed=43)
        assert a.values.tobytes() == b.values.tobytes()
        assert (a.values != c.values).mean() > 0.99

    def test_kolmogorov_smirnov_against_exponential(self):
        field = sample_gamma_speckle(1000, 1000, 1, seed=2024)
        result = stats.kstest(field.values.reshape(-1), "expon")
        assert result.pvalue > 0.01

    @pytest.mark.parametrize("looks", [1, 2, 4])
    def test_chi_square_against_density(self, looks):
        # 50 equal-probability bins from scipy's gamma quantiles
        n = 200000
        field = sample_gamma_speckle(400, 500, looks, seed=99)
        edges = stats.gamma.ppf(np.linspace(0.0, 1.0, 51), looks, scale=1.0 / looks)
        counts, _ = np.histogram(field.values.reshape(-1), bins=edges)
        result = stats.chisquare(counts, np.full(50, n / 50.0))
        assert result.pvalue > 0.01

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError, match="looks"):
            sample_gamma_speckle(4, 4, 0, seed=1)
        with pytest.raises(ValueError, match="dims"):
            sample_gamma_speckle(0, 4, 1, seed=1)

    def test_field_carries_its_parameters(self):
        field = sample_gamma_speckle(8, 8, 4, seed=5)
        assert isinstance(field, SpeckleField)
        assert field.looks == 4 and field.seed == 5 and field.values.shape == (8, 8)


class TestGammaPdf:
    def test_exponential_values_at_l1(self):
        assert gamma_pdf(1.0, 1) == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert gamma_pdf(1e-9, 1) == pytest.approx(1.0, rel=1e-6)

    @pytest.mark.parametrize("looks", [1, 2, 4])
    def test_integrates_to_one(self, looks):
        total, err = integrate.quad(lambda n: gamma_pdf(n, looks), 0.0, 50.0, limit=200)
        assert abs(total - 1.0) < 1e-6

    def test_matches_scipy_density(self):
        grid = np.linspace(0.05, 6.0, 40)
        for looks in (1, 3, 8):
            mine = np.array([gamma_pdf(float(n), looks) for n in grid])
            ref = stats.gamma.pdf(grid, looks, scale=1.0 / looks)
            np.testing.assert_allclose(mine, ref, rtol=1e-10)

    def test_rejects_nonpositive_argument(self):
        with pytest.raises(ValueError, match="n > 0"):
            gamma_pdf(0.0, 1)
        with pytest.raises(ValueError, match="looks"):
            gamma_pdf(1.0, 0)


class TestApplySpeckle:
    def test_zero_image_stays_zero(self):
        out = apply_speckle(np.zeros((16, 16)), looks=1, seed=7)
        np.testing.assert_array_equal(out, np.zeros((16, 16)))

    def test_unclipped_mean_preserved(self):
        # E[N] = 1, so a constant 0.3 image keeps its mean pre-clipping
        clean = np.full((1000, 1000), 0.3)
        noisy = apply_speckle(clean, looks=1, seed=123, clip=False)
        assert abs(noisy.mean() - 0.3) < 0.003

    def test_clipped_output_in_unit_interval(self):
        clean = np.full((64, 64), 0.9)
        noisy = apply_speckle(clean, looks=1, seed=5)
        assert noisy.min() >= 0.0 and noisy.max() <= 1.0

    def test_out_of_range_pixels_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            apply_speckle(np.full((4, 4), 1.5), looks=1, seed=0)

    def test_deterministic(self):
        clean = np.linspace(0, 1, 64).reshape(8, 8)
        a = apply_speckle(clean, looks=2, seed=9)
        b = apply_speckle(clean, looks=2, seed=9)
        assert a.tobytes() == b.tobytes()
