"""Metric values against closed forms, scikit-image as an independent
SSIM oracle, and Monte-Carlo speckle physics."""

import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from ocsd.metrics import MetricReport, RegionSpec, cx, enl, evaluate, psnr, ssim
from ocsd.speckle import sample_gamma_speckle
from conftest import make_image


class TestPSNR:
    def test_identical_images_infinite(self):
        img = make_image(32, 32, seed=0)
        assert psnr(img, img.copy()) == math.inf

    def test_black_versus_white_is_zero_db(self):
        zeros = np.zeros((16, 16))
        ones = np.ones((16, 16))
        assert psnr(zeros, ones) == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_known_constant_offset(self):
        # constant offset of 10/255: MSE = 100, PSNR = 10*log10(255^2/100)
        ref = np.full((16, 16), 0.5)
        test = ref + 10.0 / 255.0
        assert psnr(ref, test) == pytest.approx(10 * math.log10(255.0**2 / 100.0), rel=1e-9)


class TestSSIM:
    def test_identical_images_one(self):
        img = make_image(32, 32, seed=1)
        assert ssim(img, img.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_constant_luminance_shift_closed_form(self):
        # constant images: contrast/structure terms are 1, luminance < 1
        ref = np.full((16, 16), 100.0 / 255.0)
        test = np.full((16, 16), 110.0 / 255.0)
        c1 = (0.01 * 255.0) ** 2
        expected = (2 * 100.0 * 110.0 + c1) / (100.0**2 + 110.0**2 + c1)
        assert ssim(ref, test) == pytest.approx(expected, rel=1e-9)

    def test_matches_skimage_gaussian_ssim(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            ref = make_image(48, 40, seed=seed)
            test = np.clip(ref + rng.normal(0, 0.05, ref.shape), 0, 1)
            mine = ssim(ref, test)
            reference = structural_similarity(
                ref * 255.0,
                test * 255.0,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
                data_range=255.0,
            )
            assert mine == pytest.approx(reference, abs=2e-4)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="at least 11"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestNoiseMonotonicity:
    def test_noise_strictly_lowers_both_metrics(self):
        ref = make_image(48, 48, seed=3)
        for seed in range(50):
            noise = np.random.default_rng(seed).normal(0, 0.08, ref.shape)
            noisy = np.clip(ref + noise, 0, 1)
            assert psnr(ref, noisy) < math.inf
            assert ssim(ref, noisy) < 1.0


class TestENL:
    def test_constant_region_is_infinite_sentinel(self):
        img = np.full((32, 32), 0.5)
        assert enl(img, RegionSpec(0, 0, 16, 16)) == math.inf

    def test_pure_l4_speckle_estimates_four_looks(self):
        field = sample_gamma_speckle(64, 64, 4, seed=2024)
        img = 0.5 * field.values
        value = enl(img, RegionSpec(0, 0, 64, 64))
        assert abs(value - 4.0) / 4.0 < 0.15

    def test_region_outside_bounds_rejected(self):
        with pytest.raises(ValueError, match="bounds"):
            enl(np.zeros((8, 8)), RegionSpec(4, 4, 8, 8))

    def test_degenerate_region_rejected(self):
        with pytest.raises(ValueError, match="2 pixels"):
            RegionSpec(0, 0, 1, 1)


class TestCx:
    def test_constant_region_zero(self):
        img = np.full((16, 16), 0.3)
        assert cx(img, RegionSpec(0, 0, 8, 8)) == 0.0

    def test_pure_l1_speckle_coefficient_near_one(self):
        # std/mean of Exponential(1) is 1 (analytic 1/sqrt(L))
        field = sample_gamma_speckle(100, 100, 1, seed=77)
        img = np.clip(0.2 * field.values, 0.0, None)
        value = cx(img, RegionSpec(0, 0, 100, 100))
        assert abs(value - 1.0) < 0.05

    def test_zero_mean_rejected(self):
        with pytest.raises(ValueError, match="zero mean"):
            cx(np.zeros((8, 8)), RegionSpec(0, 0, 4, 4))


class TestAlgebraicIdentity:
    def test_cx_squared_times_enl_is_one(self):
        rng = np.random.default_rng(11)
        img = make_image(64, 64, seed=5) + 0.05
        img = np.clip(img, 0.05, 1.0)
        for _ in range(20):
            w = int(rng.integers(2, 30))
            h = int(rng.integers(2, 30))
            x0 = int(rng.integers(0, 64 - w))
            y0 = int(rng.integers(0, 64 - h))
            region = RegionSpec(x0, y0, w, h)
            e = enl(img, region)
            c = cx(img, region)
            if math.isinf(e):
                continue
            assert abs(c * c * e - 1.0) < 1e-10


class TestEvaluate:
    def test_requires_reference_or_regions(self):
        with pytest.raises(ValueError, match="nothing to compute"):
            evaluate(np.zeros((16, 16)))

    def test_bundles_all_requested_metrics(self):
        img = make_image(32, 32, seed=6)
        report = evaluate(img, reference=img.copy(), regions=(RegionSpec(0, 0, 8, 8),))
        assert report.psnr == math.inf
        assert report.ssim == pytest.approx(1.0, abs=1e-12)
        assert len(report.regions) == 1

    def test_json_dict_encodes_infinities_as_strings(self):
        img = np.full((16, 16), 0.5)
        report = evaluate(img, reference=img.copy(), regions=(RegionSpec(0, 0, 8, 8),))
        d = report.to_dict()
        assert d["psnr"] == "inf"
        assert d["ssim"] == pytest.approx(1.0)
        assert d["regions"][0]["enl"] == "inf"
        assert d["regions"][0]["cx"] == 0.0

    def test_report_is_plain_data(self):
        img = make_image(32, 32, seed=8)
        report = evaluate(img, reference=img.copy())
        assert isinstance(report, MetricReport)
        assert report.regions == ()
