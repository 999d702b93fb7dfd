"""Primitive forwards against nested-loop oracles, VJPs against finite differences."""

import numpy as np
import pytest

from undesir import tensor
from undesir.tensor import (
    SAME_REPLICATE,
    VALID,
    avgpool2,
    check_primitive,
    conv2d,
    dense,
    finite_difference_vjp,
    relative_error,
    relu,
    softmax,
    vjp,
)


def conv2d_oracle(image, kernels, padding):
    """Nested-loop cross-correlation, no vectorization shared with the implementation."""
    kh, kw, cin, cout = kernels.shape
    if padding == SAME_REPLICATE:
        image = np.pad(image, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)), mode="edge")
    oh = image.shape[0] - kh + 1
    ow = image.shape[1] - kw + 1
    out = np.zeros((oh, ow, cout))
    for i in range(oh):
        for j in range(ow):
            for o in range(cout):
                acc = 0.0
                for di in range(kh):
                    for dj in range(kw):
                        for c in range(cin):
                            acc += image[i + di, j + dj, c] * kernels[di, dj, c, o]
                out[i, j, o] = acc
    return out


class TestConv2d:
    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(11)
        for padding in (VALID, SAME_REPLICATE):
            x = rng.uniform(-1, 1, size=(6, 7, 2))
            k = rng.uniform(-1, 1, size=(3, 3, 2, 4))
            got = conv2d(x, k, padding)
            want = conv2d_oracle(x, k, padding)
            assert got.shape == want.shape
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_same_replicate_preserves_shape(self):
        x = np.random.default_rng(0).uniform(size=(9, 5, 3))
        k = np.random.default_rng(1).uniform(size=(5, 3, 3, 2))
        assert conv2d(x, k, SAME_REPLICATE).shape == (9, 5, 2)

    def test_valid_shrinks_by_kernel_extent(self):
        x = np.zeros((8, 8, 1))
        k = np.zeros((3, 5, 1, 1))
        assert conv2d(x, k, VALID).shape == (6, 4, 1)

    def test_constant_image_replicate_padding_is_exact(self):
        # replicate padding keeps a constant field constant, so every output
        # entry is the plain kernel sum
        k = np.random.default_rng(3).uniform(size=(3, 3, 1, 1))
        x = np.full((6, 6, 1), 0.7)
        out = conv2d(x, k, SAME_REPLICATE)
        assert np.allclose(out, 0.7 * k.sum(), atol=1e-14)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((5, 5, 1)), np.zeros((2, 3, 1, 1)), VALID)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((5, 5, 2)), np.zeros((3, 3, 1, 1)), VALID)

    def test_unknown_padding_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((5, 5, 1)), np.zeros((3, 3, 1, 1)), "reflect")

    def test_input_smaller_than_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)), VALID)


class TestDense:
    def test_matches_explicit_sum(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 1, size=4)
        w = rng.uniform(-1, 1, size=(4, 3))
        b = rng.uniform(-1, 1, size=3)
        want = np.array([sum(x[i] * w[i, j] for i in range(4)) + b[j] for j in range(3)])
        assert np.max(np.abs(dense(x, w, b) - want)) <= 1e-14

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dense(np.zeros(3), np.zeros((4, 2)), np.zeros(2))


class TestActivationsAndPooling:
    def test_relu_halfwave(self):
        x = np.array([-2.0, -0.0, 0.0, 0.5, 3.0])
        assert np.array_equal(relu(x), np.array([0.0, 0.0, 0.0, 0.5, 3.0]))

    def test_avgpool2_hand_values(self):
        x = np.arange(16, dtype=np.float64).reshape(4, 4)[:, :, None]
        out = avgpool2(x)
        assert np.array_equal(out[:, :, 0], np.array([[2.5, 4.5], [10.5, 12.5]]))

    def test_avgpool2_odd_extent_rejected(self):
        with pytest.raises(ValueError):
            avgpool2(np.zeros((5, 4, 1)))

    def test_softmax_uniform_on_equal_logits(self):
        p = softmax(np.zeros(7))
        assert np.allclose(p, 1.0 / 7.0, atol=1e-15)

    def test_softmax_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(9)
        z = rng.uniform(-5, 5, size=10)
        p = softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.max(np.abs(softmax(z + 123.0) - p)) <= 1e-12
        assert np.all(p > 0)


ALL_PRIMITIVES = sorted(tensor.REGISTRY)


class TestRegistry:
    def test_expected_primitives_registered(self):
        assert set(ALL_PRIMITIVES) >= {
            "conv2d", "dense", "relu", "avgpool2", "softmax",
            "mul", "add", "scale", "sum", "l2_norm",
            "blur", "bilinear_upsample",
        }

    def test_unknown_name_raises(self):
        with pytest.raises(KeyError):
            vjp("no_such_op", (np.zeros(2),), np.zeros(2))

    def test_duplicate_registration_rejected(self):
        with pytest.raises(ValueError):
            tensor.register(tensor.REGISTRY["relu"])


class TestVjps:
    @pytest.mark.parametrize("name", ALL_PRIMITIVES)
    def test_vjp_matches_finite_differences(self, name):
        rng = np.random.default_rng(1234)
        assert check_primitive(name, rng, trials=10) <= 1e-6

    def test_softmax_vjp_closed_form(self):
        z = np.array([0.3, -1.2, 2.0, 0.0])
        ct = np.array([1.0, -0.5, 0.25, 2.0])
        (got,) = vjp("softmax", (z,), ct)
        p = softmax(z)
        assert np.max(np.abs(got - p * (ct - ct @ p))) <= 1e-14

    def test_relu_subgradient_zero_at_kink(self):
        x = np.array([-1.0, 0.0, 1.0])
        (g,) = vjp("relu", (x,), np.ones(3))
        assert np.array_equal(g, np.array([0.0, 0.0, 1.0]))

    def test_conv2d_vjp_shapes_and_padding_slot(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(5, 6, 2))
        k = rng.uniform(size=(3, 3, 2, 3))
        ct = rng.standard_normal((5, 6, 3))
        g_img, g_k, g_pad = vjp("conv2d", (x, k, SAME_REPLICATE), ct)
        assert g_img.shape == x.shape
        assert g_k.shape == k.shape
        assert g_pad is None

    def test_cotangent_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            vjp("relu", (np.zeros(4),), np.zeros(5))

    def test_finite_difference_skips_non_arrays(self):
        grads = finite_difference_vjp(lambda x, f: x * f, (np.array([1.0, 2.0]), 3.0), np.ones(2))
        assert grads[1] is None
        assert np.allclose(grads[0], [3.0, 3.0], atol=1e-6)

    def test_relative_error_conventions(self):
        assert relative_error(None, None) == 0.0
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.array([1.0]), np.array([1.0 + 1e-8])) <= 1e-7
