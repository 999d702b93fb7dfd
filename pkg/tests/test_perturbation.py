"""Blur reference, mask upsampling, and the blend operator."""

import numpy as np
import pytest

from undesir.perturbation import (
    DESK_BLUR,
    PAPER_BLUR,
    BlurConfig,
    bilinear_upsample,
    blur_for_shape,
    gaussian_blur,
    mask_apply,
    mask_apply_mask_vjp,
)
from undesir.tensor import finite_difference_vjp, relative_error, vjp


class TestBlurConfig:
    def test_taps_normalized_and_symmetric(self):
        for cfg in (DESK_BLUR, PAPER_BLUR, BlurConfig(sigma=0.8, kernel_size=7)):
            t = cfg.taps()
            assert len(t) == cfg.kernel_size
            assert abs(t.sum() - 1.0) <= 1e-12
            assert np.max(np.abs(t - t[::-1])) <= 1e-15

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            BlurConfig(sigma=1.0, kernel_size=4)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            BlurConfig(sigma=0.0, kernel_size=5)

    def test_blur_for_shape_scales_with_image(self):
        assert blur_for_shape((32, 32, 3)) == DESK_BLUR
        assert blur_for_shape((64, 64, 3)) == PAPER_BLUR
        assert blur_for_shape((224, 224, 3)) == PAPER_BLUR


class TestGaussianBlur:
    def test_constant_image_is_fixed_point(self):
        x = np.full((16, 16, 3), 0.37)
        assert np.array_equal(gaussian_blur(x, DESK_BLUR), x)

    def test_impulse_response_is_tap_outer_product(self):
        # an interior impulse picks out w_i * w_j exactly
        cfg = PAPER_BLUR
        x = np.zeros((25, 25, 1))
        x[12, 12, 0] = 1.0
        out = gaussian_blur(x, cfg)
        t = cfg.taps()
        want = np.zeros((25, 25))
        half = cfg.kernel_size // 2
        want[12 - half:12 + half + 1, 12 - half:12 + half + 1] = np.outer(t, t)
        assert np.max(np.abs(out[:, :, 0] - want)) <= 1e-12

    def test_matches_direct_convolution_oracle(self):
        # nested-loop separable filter with clamped indices
        rng = np.random.default_rng(21)
        x = rng.uniform(size=(9, 8, 2))
        cfg = DESK_BLUR
        t = cfg.taps()
        half = cfg.kernel_size // 2
        h, w, c = x.shape
        want = np.zeros_like(x)
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    acc = 0.0
                    for a in range(cfg.kernel_size):
                        for b in range(cfg.kernel_size):
                            ii = min(max(i + a - half, 0), h - 1)
                            jj = min(max(j + b - half, 0), w - 1)
                            acc += t[a] * t[b] * x[ii, jj, ch]
                    want[i, j, ch] = acc
        assert np.max(np.abs(gaussian_blur(x, cfg) - want)) <= 1e-12

    def test_output_stays_in_input_range(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0.2, 0.9, size=(20, 20, 3))
        out = gaussian_blur(x, PAPER_BLUR)
        assert out.min() >= x.min() - 1e-12
        assert out.max() <= x.max() + 1e-12

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        x = rng.uniform(size=(7, 6, 2))
        cfg = BlurConfig(sigma=1.5, kernel_size=5)
        ct = rng.standard_normal(x.shape)
        g_img, g_cfg = vjp("blur", (x, cfg), ct)
        assert g_cfg is None
        (fd,) = finite_difference_vjp(lambda img: gaussian_blur(img, cfg), (x,), ct)
        assert relative_error(g_img, fd) <= 1e-6


class TestBilinearUpsample:
    def test_constant_mask_reproduced_bit_exactly(self):
        m = np.full((8, 8), 0.4375)
        up = bilinear_upsample(m, (32, 32))
        assert np.array_equal(up, np.full((32, 32), 0.4375))

    def test_target_shape(self):
        up = bilinear_upsample(np.zeros((28, 28)), (224, 224))
        assert up.shape == (224, 224)

    def test_hand_computed_half_pixel_weights(self):
        # 2 -> 4 along each axis: source coords (t+0.5)/2 - 0.5 = -.25,.25,.75,1.25,
        # clamped to [0,1], so a [[0,1],[0,1]] column ramp upsamples to
        # 0, 0.25, 0.75, 1 in every row
        m = np.array([[0.0, 1.0], [0.0, 1.0]])
        up = bilinear_upsample(m, (4, 4))
        for r in range(4):
            assert np.max(np.abs(up[r] - np.array([0.0, 0.25, 0.75, 1.0]))) <= 1e-15

    def test_values_stay_in_hull(self):
        rng = np.random.default_rng(6)
        m = rng.uniform(size=(8, 8))
        up = bilinear_upsample(m, (32, 32))
        assert up.min() >= m.min() - 1e-12
        assert up.max() <= m.max() + 1e-12

    def test_bad_targets_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample(np.zeros((4, 4)), (0, 8))
        with pytest.raises(ValueError):
            bilinear_upsample(np.zeros((4, 4)), (8, 2))

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        m = rng.uniform(size=(4, 3))
        target = (13, 11)
        ct = rng.standard_normal(target)
        g_m, g_t = vjp("bilinear_upsample", (m, target), ct)
        assert g_t is None
        (fd,) = finite_difference_vjp(lambda g: bilinear_upsample(g, target), (m,), ct)
        assert relative_error(g_m, fd) <= 1e-6

    def test_vjp_preserves_total_mass(self):
        # interpolation weights per output pixel sum to 1, so the adjoint
        # preserves the cotangent sum
        rng = np.random.default_rng(42)
        m = rng.uniform(size=(8, 8))
        ct = rng.standard_normal((32, 32))
        g_m, _ = vjp("bilinear_upsample", (m, (32, 32)), ct)
        assert abs(g_m.sum() - ct.sum()) <= 1e-9


class TestMaskApply:
    def test_all_ones_returns_image_bitwise(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(16, 16, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        out = mask_apply(x, np.ones((16, 16)), blurred)
        assert np.array_equal(out, x)

    def test_all_zeros_returns_blur_bitwise(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(size=(16, 16, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        out = mask_apply(x, np.zeros((16, 16)), blurred)
        assert np.array_equal(out, blurred)

    def test_halfway_mask_is_midpoint(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(size=(10, 10, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        out = mask_apply(x, np.full((10, 10), 0.5), blurred)
        assert np.max(np.abs(out - 0.5 * (x + blurred))) <= 1e-15

    def test_convex_combination_per_pixel(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=(20, 25, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        m = rng.uniform(size=(20, 25))
        out = mask_apply(x, m, blurred)
        lo = np.minimum(x, blurred)
        hi = np.maximum(x, blurred)
        flat_lo, flat_hi, flat_out = lo.reshape(-1, 3), hi.reshape(-1, 3), out.reshape(-1, 3)
        idx = rng.integers(0, flat_out.shape[0], size=1000)
        assert np.all(flat_out[idx] >= flat_lo[idx] - 1e-12)
        assert np.all(flat_out[idx] <= flat_hi[idx] + 1e-12)

    def test_linear_in_mask(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(size=(8, 8, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        m1 = rng.uniform(size=(8, 8))
        m2 = rng.uniform(size=(8, 8))
        mix = mask_apply(x, 0.3 * m1 + 0.7 * m2, blurred)
        sep = 0.3 * mask_apply(x, m1, blurred) + 0.7 * mask_apply(x, m2, blurred)
        assert np.max(np.abs(mix - sep)) <= 1e-12

    def test_shape_mismatch_rejected(self):
        x = np.zeros((8, 8, 3))
        with pytest.raises(ValueError):
            mask_apply(x, np.zeros((4, 4)), x)
        with pytest.raises(ValueError):
            mask_apply(x, np.zeros((8, 8)), np.zeros((8, 8, 1)))

    def test_mask_cotangent_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(size=(6, 5, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        m = rng.uniform(size=(6, 5))
        ct = rng.standard_normal(x.shape)
        got = mask_apply_mask_vjp(x, blurred, ct)
        (fd,) = finite_difference_vjp(lambda mm: mask_apply(x, mm, blurred), (m,), ct)
        assert relative_error(got, fd) <= 1e-6


class TestComposedPipeline:
    def test_mask_gradient_through_upsample_and_blend(self):
        # end-to-end: 8x8 mask -> upsample -> blend -> weighted scalar,
        # analytic chain vs finite differences on the low-res mask
        rng = np.random.default_rng(77)
        x = rng.uniform(size=(32, 32, 3))
        blurred = gaussian_blur(x, DESK_BLUR)
        m = rng.uniform(size=(8, 8))
        w = rng.standard_normal(x.shape)

        def forward(mask):
            up = bilinear_upsample(mask, (32, 32))
            return float((mask_apply(x, up, blurred) * w).sum())

        ct_up = mask_apply_mask_vjp(x, blurred, w)
        g_analytic, _ = vjp("bilinear_upsample", (m, (32, 32)), ct_up)
        (fd,) = finite_difference_vjp(forward, (m,), 1.0)
        assert relative_error(g_analytic, fd) <= 1e-6
