"""Tape recording, reverse-mode gradients, and the finite-difference checker."""

import unittest

import numpy as np
import numpy.testing as npt

from defunet import ops
from defunet.autodiff import (
    BACKWARD,
    GradCheckReport,
    Node,
    Parameter,
    Tape,
    grad_check,
    record,
    registered_ops,
)
from defunet.tensor import ConvSpec, ShapeError, precision


def _param(rng, shape, name):
    return Parameter(rng.standard_normal(shape), name)


class TestRecording(unittest.TestCase):
    def test_add_backward_gives_one_to_both(self):
        with precision("float64"):
            rng = np.random.default_rng(0)
            a = _param(rng, (1, 1, 2, 2), "a")
            b = _param(rng, (1, 1, 2, 2), "b")
            with Tape() as tape:
                loss = ops.sum_all(ops.add(a, b))
            grads = tape.backward(loss, [a, b])
            npt.assert_array_equal(grads[a], np.ones((1, 1, 2, 2)))
            npt.assert_array_equal(grads[b], np.ones((1, 1, 2, 2)))

    def test_constant_only_graph_records_nothing(self):
        x = Node(np.zeros((1, 1, 2, 2)))
        y = Node(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            out = ops.add(x, y)
        self.assertEqual(len(tape), 0)
        self.assertFalse(out.requires_grad)
        self.assertEqual(tape.backward(ops.sum_all(out), []), {})

    def test_unregistered_op_rejected(self):
        a = Parameter(np.zeros((1, 1, 2, 2)), "a")
        with Tape():
            with self.assertRaises(KeyError):
                record("made_up_op", Node(a.data), (a,))

    def test_sum_gradient_is_ones(self):
        with precision("float64"):
            x = Parameter(np.arange(8.0).reshape(1, 2, 2, 2), "x")
            with Tape() as tape:
                loss = ops.sum_all(x)
            npt.assert_array_equal(tape.backward(loss, [x])[x], np.ones((1, 2, 2, 2)))

    def test_half_square_sum_gradient_is_x(self):
        with precision("float64"):
            rng = np.random.default_rng(1)
            x = _param(rng, (1, 1, 3, 3), "x")
            with Tape() as tape:
                loss = ops.scale(ops.sum_all(ops.mul(x, x)), 0.5)
            npt.assert_allclose(tape.backward(loss, [x])[x], x.data, rtol=1e-12)

    def test_nonscalar_loss_rejected(self):
        x = Parameter(np.zeros((1, 1, 2, 2)), "x")
        with Tape() as tape:
            out = ops.add(x, x)
        with self.assertRaisesRegex(ShapeError, "scalar"):
            tape.backward(out, [x])

    def test_duplicated_consumer_accumulates(self):
        # x feeds the loss through two separate ops; contributions must sum
        with precision("float64"):
            rng = np.random.default_rng(2)
            x = _param(rng, (1, 1, 2, 2), "x")
            with Tape() as tape:
                loss = ops.sum_all(ops.add(ops.mul(x, x), x))
            want = 2 * x.data + 1
            npt.assert_allclose(tape.backward(loss, [x])[x], want, rtol=1e-12)

    def test_unused_param_gets_zeros(self):
        with precision("float64"):
            rng = np.random.default_rng(3)
            x = _param(rng, (1, 1, 2, 2), "x")
            idle = _param(rng, (1, 1, 4, 4), "idle")
            with Tape() as tape:
                loss = ops.sum_all(x)
            grads = tape.backward(loss, [x, idle])
            npt.assert_array_equal(grads[idle], np.zeros((1, 1, 4, 4)))
            self.assertEqual(grads[idle].shape, idle.data.shape)

    def test_insertion_order_is_topological(self):
        with precision("float64"):
            x = Parameter(np.ones((1, 1, 2, 2)), "x")
            with Tape() as tape:
                h = ops.leaky_relu(x, 0.01)
                out = ops.sum_all(ops.mul(h, h))
            names = tape.op_names()
            self.assertEqual(names, ["leaky_relu", "mul", "sum_all"])
            self.assertEqual(out.item(), 4.0)

    def test_same_seed_gives_bit_identical_grads(self):
        with precision("float64"):
            results = []
            for _ in range(2):
                rng = np.random.default_rng(17)
                x = _param(rng, (1, 2, 4, 4), "x")
                w = _param(rng, (2, 2, 3, 3), "w")
                spec = ConvSpec(2, 2)
                with Tape() as tape:
                    loss = ops.sum_all(ops.sigmoid(ops.conv2d(x, w, np.zeros(2), spec)))
                grads = tape.backward(loss, [x, w])
                results.append((grads[x].copy(), grads[w].copy()))
            npt.assert_array_equal(results[0][0], results[1][0])
            npt.assert_array_equal(results[0][1], results[1][1])


class TestConvGradients(unittest.TestCase):
    def test_conv_weight_grad_matches_fd(self):
        with precision("float64"):
            rng = np.random.default_rng(4)
            x = Node(rng.standard_normal((1, 2, 6, 6)))
            w = _param(rng, (2, 2, 3, 3), "w")
            spec = ConvSpec(2, 2)

            def loss_fn():
                return ops.sum_all(ops.conv2d(x, w, np.zeros(2), spec))

            report = grad_check(loss_fn, [w], tol=1e-8)
            self.assertTrue(report.ok, msg=repr(report))

    def test_sigmoid_conv_chain(self):
        with precision("float64"):
            rng = np.random.default_rng(5)
            x = _param(rng, (1, 2, 6, 6), "x")
            w = _param(rng, (3, 2, 3, 3), "w")
            b = _param(rng, (3,), "b")
            spec = ConvSpec(2, 3, stride=(2, 2))

            def loss_fn():
                return ops.sum_all(ops.sigmoid(ops.conv2d(x, w, b, spec)))

            report = grad_check(loss_fn, [x, w, b], tol=1e-6)
            self.assertTrue(report.ok, msg=repr(report))


class TestGradCheckHarness(unittest.TestCase):
    def test_linear_function_is_exact(self):
        with precision("float64"):
            rng = np.random.default_rng(6)
            x = _param(rng, (1, 1, 4, 4), "x")
            c = Node(rng.standard_normal((1, 1, 4, 4)))

            def loss_fn():
                return ops.sum_all(ops.mul(x, c))

            report = grad_check(loss_fn, [x], tol=1e-9)
            self.assertTrue(report.ok, msg=repr(report))

    def test_maxpool_passes_away_from_ties(self):
        with precision("float64"):
            # distinct values everywhere keep the argmax stable under the
            # +/- eps probes, which is the sampler contract
            vals = np.arange(32, dtype=np.float64)
            np.random.default_rng(7).shuffle(vals)
            x = Parameter(vals.reshape(1, 2, 4, 4), "x")

            def loss_fn():
                return ops.sum_all(ops.mul(ops.maxpool2d(x), ops.maxpool2d(x)))

            report = grad_check(loss_fn, [x], tol=1e-7)
            self.assertTrue(report.ok, msg=repr(report))

    def test_detects_a_wrong_gradient(self):
        # negative control: a corrupted backward rule must be flagged
        with precision("float64"):
            rng = np.random.default_rng(8)
            x = _param(rng, (1, 1, 3, 3), "x")
            original = BACKWARD["leaky_relu"]
            BACKWARD["leaky_relu"] = lambda g, rec: tuple(
                None if p is None else 2.0 * p for p in original(g, rec)
            )
            try:
                def loss_fn():
                    return ops.sum_all(ops.leaky_relu(x, 0.01))

                report = grad_check(loss_fn, [x], tol=1e-6)
            finally:
                BACKWARD["leaky_relu"] = original
            self.assertFalse(report.ok)

    def test_max_entries_subsamples(self):
        with precision("float64"):
            rng = np.random.default_rng(9)
            x = _param(rng, (1, 4, 8, 8), "x")

            def loss_fn():
                return ops.sum_all(ops.sigmoid(x))

            report = grad_check(loss_fn, [x], max_entries=10,
                                rng=np.random.default_rng(0))
            self.assertTrue(report.ok, msg=repr(report))

    def test_report_shape(self):
        report = GradCheckReport({"a": 1e-9, "b": 1e-8}, tol=1e-6)
        self.assertAlmostEqual(report.max_rel_err, 1e-8)
        self.assertTrue(report.ok)
        self.assertIn("worst", repr(report))


class TestRegistry(unittest.TestCase):
    def test_every_model_op_has_a_rule(self):
        needed = {
            "conv2d", "maxpool2d", "avgpool2d", "upsample_nearest2x",
            "batchnorm", "leaky_relu", "sigmoid", "add", "concat_channels",
            "mul", "sum_all", "scale", "add_const", "div",
        }
        self.assertEqual(needed, set(registered_ops()))


if __name__ == "__main__":
    unittest.main()
