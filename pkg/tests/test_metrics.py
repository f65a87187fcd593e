"""Depth and image-quality metrics."""

import numpy as np
import pytest

from msifield.metrics import DepthReport, ImageReport, depth_metrics, psnr, ssim


class TestDepthMetrics:
    def test_perfect_prediction(self):
        gt = np.full((8, 8), 0.7)
        rep = depth_metrics(gt.copy(), gt)
        assert rep.mae == 0.0 and rep.rmse == 0.0
        assert (rep.ratio_gt_0_1, rep.ratio_gt_0_3, rep.ratio_gt_0_5) == (0, 0, 0)

    def test_constant_error(self):
        gt = np.full((10, 10), 1.0)
        rep = depth_metrics(gt + 0.2, gt)
        assert rep.mae == pytest.approx(0.2)
        assert rep.rmse == pytest.approx(0.2)
        assert rep.ratio_gt_0_1 == 100.0
        assert rep.ratio_gt_0_3 == 0.0
        assert rep.ratio_gt_0_5 == 0.0

    def test_half_and_half(self):
        gt = np.full((2, 10), 1.0)
        pred = gt.copy()
        pred[0] += 0.4
        rep = depth_metrics(pred, gt)
        assert rep.mae == pytest.approx(0.2)
        assert rep.rmse == pytest.approx(np.sqrt(0.08))
        assert (rep.ratio_gt_0_1, rep.ratio_gt_0_3, rep.ratio_gt_0_5) == (50.0, 50.0, 0.0)

    def test_default_mask_excludes_infinite_gt(self):
        gt = np.array([[0.0, 1.0], [1.0, 0.0]])
        pred = np.array([[9.9, 1.1], [1.1, 9.9]])
        rep = depth_metrics(pred, gt)
        assert rep.mae == pytest.approx(0.1)

    def test_empty_mask_raises(self):
        z = np.zeros((4, 4))
        with pytest.raises(ValueError):
            depth_metrics(z, z)

    def test_permutation_invariance(self, rng):
        gt = rng.uniform(0.1, 2.0, (16, 16))
        pred = gt + rng.normal(0, 0.2, gt.shape)
        perm = rng.permutation(gt.size)
        a = depth_metrics(pred, gt)
        b = depth_metrics(pred.ravel()[perm].reshape(16, 16),
                          gt.ravel()[perm].reshape(16, 16))
        assert a == b

    def test_nested_threshold_monotonicity(self, rng):
        for _ in range(50):
            gt = rng.uniform(0.1, 2.0, (12, 12))
            pred = gt + rng.normal(0, rng.uniform(0.05, 0.6), gt.shape)
            rep = depth_metrics(pred, gt)
            assert rep.ratio_gt_0_5 <= rep.ratio_gt_0_3 <= rep.ratio_gt_0_1
            assert rep.rmse >= rep.mae  # power-mean inequality

    def test_report_serialization(self):
        rep = DepthReport(mae=0.1, rmse=0.2, ratio_gt_0_1=5.0, ratio_gt_0_3=1.0,
                          ratio_gt_0_5=0.5)
        text = rep.to_text()
        assert "mae=0.100000" in text and text.count("\n") == 5
        assert rep.csv_row().startswith("0.100000,0.200000")


class TestPsnr:
    def test_identical_images_capped(self):
        img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        assert psnr(img, img.copy()) == 99.0

    def test_uniform_difference_cases(self):
        a = np.full((20, 20, 3), 0.4)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-3)
        assert psnr(a, a + 0.5) == pytest.approx(6.0206, abs=1e-3)

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (12, 12, 3))
        b = rng.uniform(0, 1, (12, 12, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_images_one(self, rng):
        a = rng.uniform(0, 1, (24, 24, 3))
        assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_negative_for_inverted_pattern(self):
        # checkerboard vs its negative: structure anti-correlates
        u, v = np.meshgrid(np.arange(32), np.arange(32))
        a = ((u + v) % 2).astype(np.float64) * 0.8 + 0.1
        b = 1.0 - a
        assert ssim(a, b) < 0.0

    def test_constant_images_closed_form(self):
        c1, c2 = 0.3, 0.6
        a = np.full((16, 16), c1)
        b = np.full((16, 16), c2)
        k1 = 0.01
        want = (2 * c1 * c2 + k1 ** 2) / (c1 ** 2 + c2 ** 2 + k1 ** 2)
        assert ssim(a, b) == pytest.approx(want, abs=1e-12)

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (20, 20, 3))
        b = rng.uniform(0, 1, (20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_cross_check_against_skimage(self, rng):
        skimage = pytest.importorskip("skimage.metrics")
        a = rng.uniform(0, 1, (32, 32))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        want = skimage.structural_similarity(
            a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
            data_range=1.0)
        assert ssim(a, b) == pytest.approx(want, abs=1e-7)

    def test_report_serialization(self):
        rep = ImageReport(psnr=31.5, ssim=0.91)
        assert "psnr=31.500000" in rep.to_text()
        assert rep.csv_row() == "31.500000,0.910000"
