import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodulesynth.errors import DimensionMismatch, EmptyMask, SizeMismatch, TooFewSamples
from nodulesynth.features import create_feature_extractor
from nodulesynth.metrics import (
    MetricReport,
    fid_score,
    frechet_distance,
    mean_absolute_error,
    peak_signal_noise_ratio,
    pixel_metrics,
)


@pytest.fixture(scope="module")
def extractor():
    return create_feature_extractor("random", seed=0, base_channels=8)


def random_patch(seed: int, size: int = 64) -> np.ndarray:
    return np.random.default_rng(seed).random((size, size)).astype(np.float32)


class TestPixelMetrics:
    def test_identical_patches(self):
        a = random_patch(0)
        m = pixel_metrics(a, a.copy())
        assert m["mae"] == 0.0
        assert math.isinf(m["psnr"])
        assert m["ssim"] == pytest.approx(1.0)

    def test_constant_offset_point_one(self):
        a = np.zeros((64, 64))
        b = np.full((64, 64), 0.1)
        assert mean_absolute_error(a, b) == pytest.approx(0.1)
        assert peak_signal_noise_ratio(a, b) == pytest.approx(20.0)

    def test_region_restriction_ignores_outside(self):
        a = random_patch(1)
        b = a.copy()
        region = np.zeros_like(a, dtype=np.uint8)
        region[:, :32] = 1
        b[:, 32:] += 0.3  # differences only outside the region
        b = np.clip(b, 0, 1)
        m = pixel_metrics(a, b, region=region)
        assert m["mae"] == 0.0
        assert math.isinf(m["psnr"])

    def test_all_one_region_equals_full(self):
        a, b = random_patch(2), random_patch(3)
        full = pixel_metrics(a, b)
        masked = pixel_metrics(a, b, region=np.ones_like(a, dtype=np.uint8))
        assert masked["mae"] == full["mae"]
        assert masked["psnr"] == full["psnr"]
        assert masked["ssim"] == full["ssim"]

    def test_empty_region_raises(self):
        a = random_patch(4)
        with pytest.raises(EmptyMask):
            pixel_metrics(a, a, region=np.zeros_like(a, dtype=np.uint8))

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            pixel_metrics(np.zeros((8, 8)), np.zeros((9, 9)))

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_mae_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.random((3, 16, 16))
        assert mean_absolute_error(a, c) <= (
            mean_absolute_error(a, b) + mean_absolute_error(b, c) + 1e-12
        )


class TestFrechetDistance:
    def test_identical_moments(self):
        rng = np.random.default_rng(0)
        x = rng.random((40, 6))
        mu, cov = x.mean(axis=0), np.cov(x, rowvar=False)
        assert frechet_distance(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-6)

    def test_pure_mean_shift(self):
        rng = np.random.default_rng(1)
        x = rng.random((60, 5))
        mu, cov = x.mean(axis=0), np.cov(x, rowvar=False)
        v = rng.normal(size=5)
        d = frechet_distance(mu, cov, mu + v, cov)
        assert d == pytest.approx(float(v @ v), rel=0.01)

    def test_diagonal_hand_computation(self):
        # 2x2 diagonal: S1 = I, S2 = 4I, equal means
        # per-dim trace term 1 + 4 - 2*2 = 1, times 2 dims = 2
        d = frechet_distance(np.zeros(2), np.eye(2), np.zeros(2), 4 * np.eye(2))
        assert d == pytest.approx(2.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = rng.random((30, 4))
        b = rng.random((30, 4)) + 0.3
        mu1, c1 = a.mean(axis=0), np.cov(a, rowvar=False)
        mu2, c2 = b.mean(axis=0), np.cov(b, rowvar=False)
        assert frechet_distance(mu1, c1, mu2, c2) == pytest.approx(
            frechet_distance(mu2, c2, mu1, c1), abs=1e-8
        )

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            frechet_distance(np.zeros(3), np.eye(3), np.zeros(4), np.eye(4))


class TestFidScore:
    def test_identical_sets_near_zero(self, extractor):
        imgs = [random_patch(i, 32) for i in range(8)]
        assert fid_score(imgs, [i.copy() for i in imgs], extractor) < 1e-4

    def test_monotone_in_noise(self, extractor):
        rng = np.random.default_rng(5)
        imgs = [random_patch(i, 32) * 0.5 + 0.25 for i in range(10)]
        def noisy(sigma, seed):
            r = np.random.default_rng(seed)
            return [np.clip(im + r.normal(0, sigma, im.shape), 0, 1) for im in imgs]
        d_small = fid_score(imgs, noisy(1e-3, 0), extractor)
        d_big = fid_score(imgs, noisy(1e-2, 1), extractor)
        assert 0 < d_small < d_big

    def test_single_image_set_rejected(self, extractor):
        with pytest.raises(TooFewSamples):
            fid_score([random_patch(0, 32)], [random_patch(1, 32)], extractor)


def test_metric_report_json_handles_infinity():
    report = MetricReport(scope="full_patch", mae=0.0, psnr=math.inf, ssim=1.0, fid=0.0)
    obj = report.to_json()
    assert obj["psnr"] == "Infinity"
    import json

    json.dumps(obj)  # must be representable as strict JSON
