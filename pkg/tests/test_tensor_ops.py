"""Forward numeric primitives against hand values and loop oracles."""

import unittest

import numpy as np
import numpy.testing as npt

from defunet.tensor import (
    ConvSpec,
    ShapeError,
    add,
    avgpool2d,
    avgpool2d_grad,
    batchnorm,
    concat_channels,
    conv2d,
    conv2d_grad_input,
    conv2d_grad_weight,
    leaky_relu,
    maxpool2d,
    maxpool2d_grad,
    precision,
    set_debug_checks,
    sigmoid,
    upsample_nearest2x,
    upsample_nearest2x_grad,
)

import oracles


class TestConvSpec(unittest.TestCase):
    def test_effective_kernel_dilated_branch_values(self):
        spec = ConvSpec(1, 1, kernel=(3, 3), dilation=(3, 1))
        self.assertEqual(spec.effective_kernel(), (7, 3))
        spec = ConvSpec(1, 1, kernel=(3, 3), dilation=(1, 2))
        self.assertEqual(spec.effective_kernel(), (3, 5))

    def test_same_padding_output_is_ceil(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            h, w = rng.integers(1, 20, size=2)
            sh, sw = rng.integers(1, 4, size=2)
            spec = ConvSpec(1, 1, kernel=(3, 3), stride=(int(sh), int(sw)))
            self.assertEqual(spec.output_hw(int(h), int(w)),
                             (-(-int(h) // int(sh)), -(-int(w) // int(sw))))

    def test_rejects_bad_fields(self):
        with self.assertRaises(ValueError):
            ConvSpec(0, 1)
        with self.assertRaises(ValueError):
            ConvSpec(1, 1, kernel=(3, 0))
        with self.assertRaises(ValueError):
            ConvSpec(1, 1, padding="reflect")


class TestConv2d(unittest.TestCase):
    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        spec = ConvSpec(3, 3, kernel=(1, 1))
        npt.assert_array_equal(conv2d(x, w, np.zeros(3, np.float32), spec), x)

    def test_dilated_kernel_covers_7x3(self):
        # a 3x3 kernel at rate (3,1) spans 7x3 pixels, so on a 7x3 input with
        # valid padding it fires exactly once and sums all nine taps
        x = np.ones((1, 1, 7, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        spec = ConvSpec(1, 1, kernel=(3, 3), dilation=(3, 1), padding="valid")
        out = conv2d(x, w, np.zeros(1, np.float32), spec)
        self.assertEqual(out.shape, (1, 1, 1, 1))
        self.assertEqual(float(out[0, 0, 0, 0]), 9.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        cases = [
            dict(stride=(1, 1), dilation=(1, 1), padding="same"),
            dict(stride=(2, 2), dilation=(1, 1), padding="same"),
            dict(stride=(2, 2), dilation=(3, 1), padding="same"),
            dict(stride=(2, 2), dilation=(1, 2), padding="same"),
            dict(stride=(1, 1), dilation=(2, 2), padding="valid"),
        ]
        for case in cases:
            for _ in range(6):
                ic, oc = rng.integers(1, 4, size=2)
                h, w = rng.integers(8, 14, size=2)
                x = rng.standard_normal((2, ic, h, w))
                wt = rng.standard_normal((oc, ic, 3, 3))
                b = rng.standard_normal(oc)
                spec = ConvSpec(int(ic), int(oc), kernel=(3, 3), **case)
                got = conv2d(x, wt, b, spec)
                want = oracles.conv2d_loops(x, wt, b, **case)
                npt.assert_allclose(got, want, atol=1e-10, rtol=1e-10)

    def test_gemm_and_direct_paths_agree(self):
        rng = np.random.default_rng(3)
        with precision("float64"):
            for _ in range(8):
                x = rng.standard_normal((1, 2, 9, 9))
                wt = rng.standard_normal((3, 2, 3, 3))
                b = rng.standard_normal(3)
                spec = ConvSpec(2, 3, stride=(2, 2), dilation=(1, 2))
                a = conv2d(x, wt, b, spec, method="gemm")
                d = conv2d(x, wt, b, spec, method="direct")
                npt.assert_allclose(a, d, atol=1e-10, rtol=1e-10)

    def test_linear_in_input(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 2, 8, 8))
        wt = rng.standard_normal((2, 2, 3, 3))
        spec = ConvSpec(2, 2)
        lhs = conv2d(3.0 * x, wt, np.zeros(2), spec)
        rhs = 3.0 * conv2d(x, wt, np.zeros(2), spec)
        npt.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_shape_errors_name_the_axis(self):
        x = np.zeros((1, 2, 8, 8), dtype=np.float32)
        spec = ConvSpec(3, 1)
        with self.assertRaisesRegex(ShapeError, "channel"):
            conv2d(x, np.zeros((1, 3, 3, 3), np.float32), np.zeros(1, np.float32), spec)
        spec = ConvSpec(2, 1)
        with self.assertRaisesRegex(ShapeError, "weight"):
            conv2d(x, np.zeros((1, 2, 5, 5), np.float32), np.zeros(1, np.float32), spec)

    def test_debug_mode_flags_nonfinite(self):
        x = np.full((1, 1, 4, 4), np.nan, dtype=np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        spec = ConvSpec(1, 1, kernel=(1, 1))
        set_debug_checks(True)
        try:
            with self.assertRaises(FloatingPointError):
                conv2d(x, w, np.zeros(1, np.float32), spec)
        finally:
            set_debug_checks(False)

    def test_grad_routines_match_loop_fd(self):
        # analytic input/weight gradients vs finite differences of the
        # loop-oracle forward; small case keeps the FD sweep affordable
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 2, 5, 5))
        wt = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        spec = ConvSpec(2, 2, stride=(2, 2))
        go = rng.standard_normal((1, 2, 3, 3))

        def loss(xv, wv):
            return float((oracles.conv2d_loops(xv, wv, b, stride=(2, 2)) * go).sum())

        gi = conv2d_grad_input(go, wt, spec, x.shape)
        gw, gb = conv2d_grad_weight(go, x, spec)
        eps = 1e-6
        for arr, grad in ((x, gi), (wt, gw)):
            flat = arr.ravel()
            for k in rng.choice(flat.size, size=12, replace=False):
                orig = flat[k]
                flat[k] = orig + eps
                up = loss(x, wt)
                flat[k] = orig - eps
                down = loss(x, wt)
                flat[k] = orig
                npt.assert_allclose(grad.ravel()[k], (up - down) / (2 * eps),
                                    rtol=1e-4, atol=1e-7)
        npt.assert_allclose(gb, go.sum(axis=(0, 2, 3)), rtol=1e-12)


class TestMaxPool(unittest.TestCase):
    def test_hand_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        out, idx = maxpool2d(x)
        self.assertEqual(float(out[0, 0, 0, 0]), 4.0)
        self.assertEqual(int(idx[0, 0, 0, 0]), 3)

    def test_constant_input(self):
        x = np.full((1, 2, 4, 4), 2.5, dtype=np.float32)
        out, idx = maxpool2d(x)
        npt.assert_array_equal(out, np.full((1, 2, 2, 2), 2.5, np.float32))
        # ties resolve to the first window position
        npt.assert_array_equal(idx, np.zeros((1, 2, 2, 2), np.uint8))

    def test_matches_window_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            n, c = rng.integers(1, 3, size=2)
            h, w = 2 * rng.integers(1, 6, size=2)
            x = rng.standard_normal((n, c, h, w)).astype(np.float32)
            out, _ = maxpool2d(x)
            npt.assert_array_equal(out, oracles.maxpool_windows(x))

    def test_odd_dims_rejected(self):
        with self.assertRaisesRegex(ShapeError, "height"):
            maxpool2d(np.zeros((1, 1, 5, 4), dtype=np.float32))

    def test_grad_routes_to_argmax_only(self):
        rng = np.random.default_rng(22)
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float64)
        out, idx = maxpool2d(x)
        go = rng.standard_normal(out.shape)
        gx = maxpool2d_grad(go, idx)
        # each window: full gradient at the max, zero elsewhere
        self.assertAlmostEqual(gx.sum(), go.sum(), places=10)
        npt.assert_array_equal(gx != 0, np.isclose(x, out.repeat(2, 2).repeat(2, 3)))


class TestAvgPool(unittest.TestCase):
    def test_constant_interior_window(self):
        x = np.full((1, 1, 7, 7), 3.0, dtype=np.float64)
        out = avgpool2d(x)
        # interior windows see nine equal values
        self.assertAlmostEqual(float(out[0, 0, 1, 1]), 3.0, places=12)

    def test_zeros(self):
        out = avgpool2d(np.zeros((1, 2, 6, 6), dtype=np.float32))
        npt.assert_array_equal(out, np.zeros_like(out))

    def test_matches_padded_window_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            h, w = rng.integers(4, 11, size=2)
            x = rng.standard_normal((1, 2, h, w))
            npt.assert_allclose(avgpool2d(x), oracles.avgpool_windows(x),
                                atol=1e-12, rtol=1e-12)

    def test_grad_is_uniform_share(self):
        rng = np.random.default_rng(32)
        x = rng.standard_normal((1, 1, 6, 6))
        go = rng.standard_normal((1, 1, 3, 3))
        gx = avgpool2d_grad(go, x.shape)
        eps = 1e-6
        for k in rng.choice(x.size, size=8, replace=False):
            orig = x.ravel()[k]
            x.ravel()[k] = orig + eps
            up = float((avgpool2d(x) * go).sum())
            x.ravel()[k] = orig - eps
            down = float((avgpool2d(x) * go).sum())
            x.ravel()[k] = orig
            npt.assert_allclose(gx.ravel()[k], (up - down) / (2 * eps), atol=1e-8)


class TestUpsample(unittest.TestCase):
    def test_single_value_block(self):
        out = upsample_nearest2x(np.full((1, 1, 1, 1), 7.0, np.float32))
        npt.assert_array_equal(out, np.full((1, 1, 2, 2), 7.0, np.float32))

    def test_shape_law(self):
        self.assertEqual(upsample_nearest2x(np.zeros((2, 3, 4, 4), np.float32)).shape,
                         (2, 3, 8, 8))

    def test_strided_downsample_round_trip(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            x = rng.standard_normal((2, 2, 5, 3)).astype(np.float32)
            up = upsample_nearest2x(x)
            npt.assert_array_equal(up[:, :, ::2, ::2], x)
            npt.assert_array_equal(up[:, :, 1::2, 1::2], x)

    def test_grad_sums_blocks(self):
        go = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        gx = upsample_nearest2x_grad(go)
        self.assertEqual(gx.shape, (1, 1, 2, 2))
        self.assertAlmostEqual(float(gx[0, 0, 0, 0]), 0 + 1 + 4 + 5)


class TestBatchNorm(unittest.TestCase):
    def _stats(self, c):
        return (np.ones(c, np.float64), np.zeros(c, np.float64),
                np.zeros(c, np.float64), np.ones(c, np.float64))

    def test_constant_input_beta_zero(self):
        gamma, beta, rm, rv = self._stats(2)
        x = np.full((2, 2, 3, 3), 5.0)
        res = batchnorm(x, 3.0 * gamma, beta, rm, rv, train=True)
        npt.assert_allclose(res.out, np.zeros_like(x), atol=1e-6)

    def test_train_mode_standardizes(self):
        rng = np.random.default_rng(51)
        gamma, beta, rm, rv = self._stats(3)
        x = rng.standard_normal((4, 3, 8, 8)) * 2.0 + 1.5
        res = batchnorm(x, gamma, beta, rm, rv, train=True)
        npt.assert_allclose(res.out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
        npt.assert_allclose(res.out.var(axis=(0, 2, 3)), 1, atol=1e-4)

    def test_matches_two_pass_reference(self):
        rng = np.random.default_rng(52)
        for _ in range(10):
            x = rng.standard_normal((2, 3, 5, 5))
            gamma = rng.standard_normal(3)
            beta = rng.standard_normal(3)
            _, _, rm, rv = self._stats(3)
            res = batchnorm(x, gamma, beta, rm, rv, train=True)
            want = oracles.batchnorm_two_pass(x, gamma, beta)
            npt.assert_allclose(res.out, want, atol=1e-5)

    def test_eval_mode_uses_running_stats(self):
        gamma, beta, _, _ = self._stats(1)
        rm = np.array([2.0])
        rv = np.array([4.0])
        x = np.full((1, 1, 2, 2), 4.0)
        res = batchnorm(x, gamma, beta, rm, rv, train=False)
        npt.assert_allclose(res.out, (4.0 - 2.0) / np.sqrt(4.0 + 1e-5), rtol=1e-6)
        npt.assert_array_equal(res.running_mean, rm)

    def test_running_update_is_unbiased_ema(self):
        rng = np.random.default_rng(53)
        x = rng.standard_normal((2, 1, 4, 4))
        gamma, beta, rm, rv = self._stats(1)
        res = batchnorm(x, gamma, beta, rm, rv, train=True, momentum=0.1)
        m = x.size
        npt.assert_allclose(res.running_mean, 0.9 * 0.0 + 0.1 * x.mean(), rtol=1e-12)
        npt.assert_allclose(res.running_var,
                            0.9 * 1.0 + 0.1 * x.var() * m / (m - 1), rtol=1e-12)

    def test_channel_mismatch(self):
        gamma, beta, rm, rv = self._stats(3)
        with self.assertRaisesRegex(ShapeError, "gamma"):
            batchnorm(np.zeros((1, 2, 2, 2)), gamma, beta, rm[:2], rv[:2], train=True)


class TestActivations(unittest.TestCase):
    def test_leaky_relu_values(self):
        self.assertEqual(float(leaky_relu(np.array(1.0))), 1.0)
        self.assertAlmostEqual(float(leaky_relu(np.array(-2.0), alpha=0.01)), -0.02)

    def test_leaky_relu_negative_slope_fd(self):
        x = np.array(-0.7)
        eps = 1e-6
        fd = (leaky_relu(x + eps) - leaky_relu(x - eps)) / (2 * eps)
        self.assertAlmostEqual(float(fd), 0.01, places=6)

    def test_sigmoid_values(self):
        self.assertEqual(float(sigmoid(np.array(0.0))), 0.5)
        with np.errstate(over="raise"):
            self.assertAlmostEqual(float(sigmoid(np.array(40.0))), 1.0, places=12)
            self.assertAlmostEqual(float(sigmoid(np.array(-40.0))), 0.0, places=12)

    def test_sigmoid_derivative_fd(self):
        rng = np.random.default_rng(61)
        x = rng.standard_normal(50)
        eps = 1e-5
        fd = (sigmoid(x + eps) - sigmoid(x - eps)) / (2 * eps)
        npt.assert_allclose(fd, sigmoid(x) * (1 - sigmoid(x)), atol=1e-4)


class TestAddConcat(unittest.TestCase):
    def test_add_identities(self):
        rng = np.random.default_rng(71)
        a = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
        npt.assert_array_equal(add(a, np.zeros_like(a)), a)
        npt.assert_array_equal(add(a, a), 2 * a)

    def test_add_commutes_exactly(self):
        rng = np.random.default_rng(72)
        for _ in range(20):
            a = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
            b = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
            npt.assert_array_equal(add(a, b), add(b, a))

    def test_add_rejects_shape_mismatch(self):
        with self.assertRaisesRegex(ShapeError, "channel"):
            add(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 4, 4)))

    def test_concat_single_identity(self):
        a = np.random.default_rng(73).standard_normal((1, 2, 3, 3)).astype(np.float32)
        npt.assert_array_equal(concat_channels([a]), a)

    def test_concat_shape_law(self):
        out = concat_channels([np.zeros((1, 2, 4, 4), np.float32),
                               np.zeros((1, 3, 4, 4), np.float32)])
        self.assertEqual(out.shape, (1, 5, 4, 4))

    def test_concat_slicing_round_trip(self):
        rng = np.random.default_rng(74)
        for _ in range(15):
            widths = rng.integers(1, 4, size=3)
            parts = [rng.standard_normal((2, int(c), 3, 3)).astype(np.float32)
                     for c in widths]
            out = concat_channels(parts)
            lo = 0
            for p in parts:
                hi = lo + p.shape[1]
                npt.assert_array_equal(out[:, lo:hi], p)
                lo = hi

    def test_concat_spatial_mismatch(self):
        with self.assertRaisesRegex(ShapeError, "height"):
            concat_channels([np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 5, 4))])


class TestOutputShapesArePureFunctions(unittest.TestCase):
    def test_conv_output_shape_matches_spec(self):
        rng = np.random.default_rng(81)
        for _ in range(40):
            ic, oc = (int(v) for v in rng.integers(1, 4, size=2))
            h, w = (int(v) for v in rng.integers(6, 16, size=2))
            sh, sw = (int(v) for v in rng.integers(1, 3, size=2))
            dh, dw = (int(v) for v in rng.integers(1, 3, size=2))
            spec = ConvSpec(ic, oc, kernel=(3, 3), stride=(sh, sw), dilation=(dh, dw))
            x = rng.standard_normal((1, ic, h, w)).astype(np.float32)
            wt = rng.standard_normal((oc, ic, 3, 3)).astype(np.float32)
            out = conv2d(x, wt, np.zeros(oc, np.float32), spec)
            self.assertEqual(out.shape, (1, oc) + spec.output_hw(h, w))


if __name__ == "__main__":
    unittest.main()
