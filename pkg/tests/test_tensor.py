import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pnprestore import tensor
from pnprestore.errors import ContractError, ValidationError
from pnprestore.kernels import gaussian_kernel
from pnprestore.tensor import (KernelBank, circular_conv, clip_to_range, conv2d_dilated,
                               embed_kernel, fft2, ifft2, psnr, zero_pad)

from oracles import circular_conv_loops, conv_loops, dft2_direct


def identity_bank(channels=1, dilation=1):
    w = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        w[c, c, 1, 1] = 1.0
    return KernelBank(w, dilation)


class TestConv2dDilated:
    def test_identity_kernel_single_pixel(self):
        out = conv2d_dilated(np.ones((1, 1, 1)), identity_bank(), np.zeros(1))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 1.0

    def test_impulse_response_dilation_2(self):
        x = np.zeros((5, 5, 1))
        x[2, 2, 0] = 1.0
        out = conv2d_dilated(x, KernelBank(np.ones((1, 1, 3, 3)), 2))
        expected = np.zeros((5, 5))
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                expected[2 + 2 * di, 2 + 2 * dj] = 1.0
        np.testing.assert_array_equal(out[:, :, 0], expected)

    def test_matches_nested_loops(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 8, 2))
        w = rng.standard_normal((4, 2, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d_dilated(x, KernelBank(w, 3), b)
        np.testing.assert_allclose(out, conv_loops(x, w, b, 3), rtol=0, atol=1e-10)

    def test_tap_by_tap_path_matches_im2col(self, monkeypatch):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((9, 7, 3))
        bank = KernelBank(rng.standard_normal((5, 3, 3, 3)), 2)
        fast = conv2d_dilated(x, bank)
        monkeypatch.setattr(tensor, "IM2COL_LIMIT", 0)
        np.testing.assert_allclose(conv2d_dilated(x, bank), fast, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ContractError):
            conv2d_dilated(np.zeros((4, 4, 2)), identity_bank(1))

    def test_non_finite_weights(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            KernelBank(w)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        bank = KernelBank(rng.standard_normal((3, 2, 3, 3)), 2)
        x, y = rng.standard_normal((2, 10, 10, 2))
        a, b = 1.7, -0.4
        lhs = conv2d_dilated(a * x + b * y, bank)
        rhs = a * conv2d_dilated(x, bank) + b * conv2d_dilated(y, bank)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    @pytest.mark.parametrize("s", [1, 2, 3, 4])
    def test_impulse_support_within_chebyshev_distance(self, s):
        rng = np.random.default_rng(s)
        x = np.zeros((15, 15, 1))
        x[7, 7, 0] = 1.0
        out = conv2d_dilated(x, KernelBank(rng.uniform(0.5, 1.0, (1, 1, 3, 3)), s))[:, :, 0]
        rows, cols = np.nonzero(out)
        assert np.max(np.maximum(abs(rows - 7), abs(cols - 7))) == s

    def test_footprint(self):
        assert KernelBank(np.zeros((1, 1, 3, 3)), 4).footprint == (9, 9)


class TestZeroPad:
    def test_margin_zero_unchanged(self):
        x = np.arange(4.0).reshape(2, 2, 1)
        np.testing.assert_array_equal(zero_pad(x, 0), x)

    def test_single_pixel(self):
        out = zero_pad(np.full((1, 1, 1), 5.0), 1)
        expected = np.zeros((3, 3, 1))
        expected[1, 1] = 5.0
        np.testing.assert_array_equal(out, expected)

    def test_interior_slice(self):
        x = np.random.default_rng(0).random((35, 35, 1))
        out = zero_pad(x, 4)
        assert out.shape == (43, 43, 1)
        np.testing.assert_array_equal(out[4:-4, 4:-4], x)
        assert np.count_nonzero(out) == np.count_nonzero(x)

    def test_negative_margin(self):
        with pytest.raises(ContractError):
            zero_pad(np.zeros((2, 2)), -1)


class TestFFT:
    def test_constant_is_dc_only(self):
        spec = fft2(np.full((6, 6, 1), 0.25))
        assert spec[0, 0, 0] == pytest.approx(36 * 0.25)
        rest = spec.copy()
        rest[0, 0] = 0
        np.testing.assert_allclose(np.abs(rest), 0, atol=1e-12)

    def test_impulse_is_flat(self):
        x = np.zeros((5, 4, 1))
        x[0, 0] = 1
        np.testing.assert_allclose(fft2(x), np.ones((5, 4, 1)), atol=1e-15)

    def test_matches_direct_dft(self):
        x = np.random.default_rng(3).standard_normal((7, 5, 2))
        np.testing.assert_allclose(fft2(x), dft2_direct(x), rtol=0, atol=1e-8)

    def test_round_trip(self):
        x = np.random.default_rng(4).standard_normal((13, 11, 3))
        np.testing.assert_allclose(ifft2(fft2(x)), x, rtol=0, atol=1e-9)

    def test_conjugate_symmetry(self):
        x = np.random.default_rng(5).standard_normal((6, 9, 1))
        spec = fft2(x)[:, :, 0]
        flipped = np.roll(spec[::-1, ::-1], (1, 1), axis=(0, 1))
        np.testing.assert_allclose(spec, np.conj(flipped), atol=1e-12)

    def test_parseval_unnormalized_forward(self):
        x = np.random.default_rng(6).standard_normal((10, 7, 1))
        n = 10 * 7
        assert np.sum(np.abs(fft2(x)) ** 2) == pytest.approx(n * np.sum(x ** 2), rel=1e-12)


class TestCircularConv:
    def test_unit_kernel_is_identity(self):
        x = np.random.default_rng(0).random((6, 5, 2))
        np.testing.assert_allclose(circular_conv(x, np.ones((1, 1))), x, atol=1e-15)

    def test_impulse_gives_wrapped_kernel(self):
        x = np.zeros((4, 4, 1))
        x[0, 0] = 1
        k = np.arange(1.0, 10.0).reshape(3, 3)
        out = circular_conv(x, k)[:, :, 0]
        for a in range(3):
            for b in range(3):
                assert out[(a - 1) % 4, (b - 1) % 4] == pytest.approx(k[a, b])
        assert out[2, 2] == pytest.approx(0, abs=1e-12)

    def test_matches_spatial_loops(self):
        x = np.random.default_rng(1).random((9, 9, 1))
        k = gaussian_kernel(1.2, 5)
        np.testing.assert_allclose(circular_conv(x, k), circular_conv_loops(x, k), atol=1e-9)

    def test_convolution_theorem(self):
        rng = np.random.default_rng(2)
        x = rng.random((16, 16, 1))
        k = rng.random((5, 3))
        via_fft = ifft2(fft2(x) * fft2(embed_kernel(k, (16, 16))))
        np.testing.assert_allclose(circular_conv(x, k), via_fft, atol=1e-9)
        np.testing.assert_allclose(circular_conv(x, k), circular_conv_loops(x, k), atol=1e-9)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            circular_conv(np.zeros((4, 4, 1)), np.ones((2, 3)))

    def test_kernel_larger_than_image_folds(self):
        x = np.random.default_rng(3).random((4, 4, 1))
        k = np.random.default_rng(4).random((7, 7))
        np.testing.assert_allclose(circular_conv(x, k), circular_conv_loops(x, k), atol=1e-12)


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.random.default_rng(0).random((4, 4, 1))
        assert psnr(x, x) == math.inf

    def test_zero_vs_one(self):
        assert psnr(np.zeros((3, 3)), np.ones((3, 3)), 1.0) == pytest.approx(0.0)

    def test_constant_offset(self):
        assert psnr(np.zeros((3, 3)), np.full((3, 3), 0.1), 1.0) == pytest.approx(20.0)

    def test_peak_255(self):
        assert psnr(np.zeros((2, 2)), np.full((2, 2), 255.0), 255.0) == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((3, 3)), np.zeros((3, 4)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (5, 4), elements=st.floats(0, 1)),
           arrays(np.float64, (5, 4), elements=st.floats(0, 1)),
           st.floats(-0.5, 0.5))
    def test_symmetric_and_translation_invariant(self, a, b, c):
        p = psnr(a, b)
        assert psnr(b, a) == p
        shifted = psnr(a + c, b + c)
        if math.isinf(p):
            assert math.isinf(shifted) or shifted > 250
        else:
            assert shifted == pytest.approx(p, rel=1e-6, abs=1e-6)


class TestClip:
    def test_in_range_unchanged(self):
        x = np.random.default_rng(0).random((3, 3, 1))
        np.testing.assert_array_equal(clip_to_range(x, 0, 1), x)

    def test_clamps(self):
        assert clip_to_range(np.full((1, 1), 1.3), 0, 1)[0, 0, 0] == 1.0

    def test_scan(self):
        x = np.random.default_rng(1).normal(0.5, 1.0, (20, 20, 3))
        out = clip_to_range(x, -0.2, 0.7)
        assert out.min() >= -0.2 and out.max() <= 0.7

    def test_bad_bounds(self):
        with pytest.raises(ContractError):
            clip_to_range(np.zeros((2, 2)), 1, 1)
