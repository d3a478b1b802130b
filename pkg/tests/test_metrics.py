import math

import numpy as np
import pytest

from mrst.core import Image
from mrst.metrics import RoiMask, circular_roi, downsample_image, psnr, rmse


class TestCircularRoi:
    def test_full_fraction_covers_inscribed_circle(self):
        roi = circular_roi((8, 8), 1.0)
        # corners excluded, center included
        assert not roi.mask[0, 0]
        assert roi.mask[4, 4]
        assert roi.count == int(roi.mask.sum())

    def test_tiny_fraction_center_pixels(self):
        roi = circular_roi((9, 9), 0.05)
        assert roi.count == 1
        assert roi.mask[4, 4]

    def test_count_tracks_area(self):
        roi = circular_roi((128, 128), 0.75)
        want = math.pi * (0.5 * 0.75 * 128) ** 2
        assert abs(roi.count - want) < 60

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            circular_roi((8, 8), 0.0)
        with pytest.raises(ValueError):
            circular_roi((8, 8), 1.5)

    def test_mask_validation(self):
        with pytest.raises(ValueError):
            RoiMask(np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError):
            RoiMask(np.ones((4, 4)))


class TestRmsePsnr:
    def test_rmse_by_hand(self):
        a = Image.from_array(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Image.from_array(np.array([[1.0, 0.0], [3.0, 1.0]]))
        roi = RoiMask(np.array([[False, True], [False, True]]))
        assert rmse(a, b, roi) == pytest.approx(math.sqrt((4.0 + 9.0) / 2))

    def test_rmse_accepts_plain_arrays(self):
        a = np.ones((3, 3))
        b = np.zeros((3, 3))
        assert rmse(a, b, RoiMask(np.ones((3, 3), dtype=bool))) == 1.0

    def test_psnr_known_value(self):
        a = np.full((2, 2), 90.0)
        b = np.full((2, 2), 100.0)
        roi = RoiMask(np.ones((2, 2), dtype=bool))
        # peak defaults to reference max (100), mse = 100 -> 20 dB
        assert psnr(a, b, roi) == pytest.approx(20.0)
        assert psnr(a, b, roi, peak=1000.0) == pytest.approx(40.0)

    def test_psnr_perfect_match_is_inf(self):
        a = np.full((2, 2), 5.0)
        roi = RoiMask(np.ones((2, 2), dtype=bool))
        assert psnr(a, a.copy(), roi) == math.inf

    def test_psnr_rejects_nonpositive_peak(self):
        roi = RoiMask(np.ones((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)) - 1.0, roi)

    def test_shape_mismatch(self):
        roi = RoiMask(np.ones((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            rmse(np.zeros((2, 2)), np.zeros((3, 3)), roi)
        with pytest.raises(ValueError):
            rmse(np.zeros((3, 3)), np.zeros((3, 3)), roi)


class TestDownsample:
    def test_block_mean(self):
        img = Image.from_array(np.arange(16.0).reshape(4, 4))
        out = downsample_image(img, 2)
        assert out.data.tolist() == [[2.5, 4.5], [10.5, 12.5]]
        assert out.pixel_size_x == 2.0

    def test_factor_one_copies(self):
        img = Image.from_array(np.ones((4, 4)))
        out = downsample_image(img, 1)
        assert np.array_equal(out.data, img.data)
        assert out.data is not img.data

    def test_mean_preserved(self):
        rng = np.random.default_rng(0)
        img = Image.from_array(rng.normal(size=(12, 8)))
        out = downsample_image(img, 4)
        assert out.data.mean() == pytest.approx(img.data.mean())

    def test_rejects_nondivisible(self):
        with pytest.raises(ValueError):
            downsample_image(Image.from_array(np.ones((6, 6))), 4)
