"""Adam updates, plateau scheduling, and early stopping."""

import unittest

import numpy as np
import numpy.testing as npt

import oracles
from defunet.autodiff import Parameter
from defunet.optim import Adam, EarlyStopper, PlateauScheduler, improved
from defunet.tensor import ShapeError, precision


class TestAdam(unittest.TestCase):
    def test_first_step_closed_form(self):
        # m_hat = v_hat = 1 after one unit gradient, so dw = -lr/(1+eps)
        with precision("float64"):
            w = Parameter(np.zeros((1, 1, 1, 1)), "w")
            opt = Adam([w], lr=0.001)
            opt.step({w: np.ones((1, 1, 1, 1))})
            expect = -0.001 * (1.0 / (1.0 + 1e-8))
            npt.assert_allclose(w.data, expect, rtol=1e-12)

    def test_first_step_opposes_gradient_sign(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = Parameter(rng.standard_normal((1, 1, 2, 2)), "w")
            g = rng.standard_normal((1, 1, 2, 2))
            g[g == 0] = 1.0
            before = w.data.copy()
            Adam([w], lr=1e-3).step({w: g})
            npt.assert_array_equal(np.sign(w.data - before), -np.sign(g))

    def test_zero_gradients_leave_params_unchanged(self):
        w = Parameter(np.full((1, 1, 2, 2), 0.3), "w")
        before = w.data.copy()
        opt = Adam([w], lr=1e-3)
        for _ in range(5):
            opt.step({w: np.zeros((1, 1, 2, 2))})
        npt.assert_array_equal(w.data, before)
        self.assertEqual(opt.t, 5)
        npt.assert_array_equal(opt.m[0], 0.0)
        npt.assert_array_equal(opt.v[0], 0.0)

    def test_moments_decay_after_real_step(self):
        w = Parameter(np.zeros((1, 1, 1, 1)), "w")
        opt = Adam([w], lr=1e-3)
        opt.step({w: np.ones((1, 1, 1, 1))})
        m1, v1 = opt.m[0].copy(), opt.v[0].copy()
        opt.step({w: np.zeros((1, 1, 1, 1))})
        npt.assert_allclose(opt.m[0], 0.9 * m1, rtol=1e-15)
        npt.assert_allclose(opt.v[0], 0.999 * v1, rtol=1e-15)

    def test_ten_steps_match_scalar_reference(self):
        with precision("float64"):
            rng = np.random.default_rng(1)
            grads = rng.standard_normal(10)
            w = Parameter(np.array(0.5).reshape(1, 1, 1, 1), "w")
            opt = Adam([w], lr=0.01)
            trajectory = []
            for g in grads:
                opt.step({w: np.full((1, 1, 1, 1), g)})
                trajectory.append(w.data.item())
            expect = oracles.adam_scalar_steps(0.5, grads, lr=0.01)
            npt.assert_allclose(trajectory, expect, rtol=0.0, atol=1e-12)

    def test_gradient_shape_mismatch_rejected(self):
        w = Parameter(np.zeros((1, 1, 2, 2)), "w")
        opt = Adam([w], lr=1e-3)
        with self.assertRaises(ShapeError):
            opt.step({w: np.zeros((1, 1, 2, 3))})

    def test_duplicate_parameter_names_rejected(self):
        a = Parameter(np.zeros((1, 1, 1, 1)), "w")
        b = Parameter(np.zeros((1, 1, 1, 1)), "w")
        with self.assertRaises(ValueError):
            Adam([a, b])

    def test_state_round_trip_resumes_bit_exact(self):
        rng = np.random.default_rng(2)
        grads = [rng.standard_normal((1, 2, 2, 2)) for _ in range(5)]
        w = Parameter(rng.standard_normal((1, 2, 2, 2)), "w")
        opt = Adam([w], lr=0.02)
        for g in grads[:3]:
            opt.step({w: g})
        saved_data = w.data.copy()
        saved_state = opt.state_dict()
        for g in grads[3:]:
            opt.step({w: g})
        final_a = w.data.copy()

        w2 = Parameter(saved_data, "w")
        opt2 = Adam([w2], lr=999.0)
        opt2.load_state_dict(saved_state)
        self.assertEqual(opt2.t, 3)
        self.assertEqual(opt2.lr, 0.02)
        for g in grads[3:]:
            opt2.step({w2: g})
        npt.assert_array_equal(w2.data, final_a)

    def test_loaded_state_shape_checked(self):
        w = Parameter(np.zeros((1, 1, 2, 2)), "w")
        state = Adam([w]).state_dict()
        state["m.w"] = np.zeros((1, 1, 3, 3))
        with self.assertRaises(ShapeError):
            Adam([Parameter(np.zeros((1, 1, 2, 2)), "w")]).load_state_dict(state)


class TestPlateauScheduler(unittest.TestCase):
    def test_monotone_improvement_keeps_lr(self):
        sched = PlateauScheduler(1e-5, factor=0.2, patience=5)
        for value in (1.0, 0.9, 0.8):
            self.assertEqual(sched.update(value), 1e-5)

    def test_six_stagnant_epochs_cut_once(self):
        # first observation is the baseline; the cut lands on the sixth
        # consecutive non-improving epoch (wait > patience)
        sched = PlateauScheduler(1e-5, factor=0.2, patience=5)
        sched.update(1.0)
        for _ in range(5):
            self.assertEqual(sched.update(1.0), 1e-5)
        npt.assert_allclose(sched.update(1.0), 2e-6, rtol=1e-12)

    def test_two_plateau_cycles_compound(self):
        sched = PlateauScheduler(1e-5, factor=0.2, patience=5)
        lr = sched.update(1.0)
        for _ in range(12):
            lr = sched.update(1.0)
        npt.assert_allclose(lr, 1e-5 * 0.2**2, rtol=1e-12)

    def test_improvement_resets_wait(self):
        sched = PlateauScheduler(1e-5, factor=0.2, patience=2)
        sched.update(1.0)
        sched.update(1.0)
        sched.update(1.0)
        self.assertEqual(sched.wait, 2)
        sched.update(0.5)
        self.assertEqual(sched.wait, 0)
        self.assertEqual(sched.lr, 1e-5)

    def test_lr_never_increases_and_stays_positive(self):
        rng = np.random.default_rng(3)
        sched = PlateauScheduler(1e-3, factor=0.5, patience=1)
        last = sched.lr
        for value in rng.random(200):
            lr = sched.update(float(value))
            self.assertLessEqual(lr, last)
            self.assertGreater(lr, 0.0)
            last = lr

    def test_min_lr_floor(self):
        sched = PlateauScheduler(1e-5, factor=0.2, patience=0, min_lr=5e-6)
        sched.update(1.0)
        self.assertEqual(sched.update(1.0), 5e-6)
        self.assertEqual(sched.update(1.0), 5e-6)

    def test_deterministic_for_a_loss_stream(self):
        rng = np.random.default_rng(4)
        stream = rng.random(50).tolist()
        runs = []
        for _ in range(2):
            sched = PlateauScheduler(1e-4, factor=0.2, patience=3)
            runs.append([sched.update(v) for v in stream])
        self.assertEqual(runs[0], runs[1])

    def test_bad_factor_rejected(self):
        with self.assertRaises(ValueError):
            PlateauScheduler(1e-5, factor=1.5)
        with self.assertRaises(ValueError):
            PlateauScheduler(1e-5, factor=0.0)


class TestEarlyStopper(unittest.TestCase):
    def test_improving_stream_never_stops(self):
        stopper = EarlyStopper(patience=5)
        for value in np.linspace(1.0, 0.1, 50):
            self.assertFalse(stopper.update(float(value)))

    def test_constant_stream_stops_after_patience_plus_one_stagnant(self):
        stopper = EarlyStopper(patience=5)
        flags = [stopper.update(1.0) for _ in range(10)]
        # baseline epoch, then patience+1 = 6 stagnant epochs
        self.assertEqual(flags.index(True), 6)

    def test_late_improvement_resets_counter(self):
        stopper = EarlyStopper(patience=5)
        values = [1.0, 1.0, 1.0, 1.0, 1.0, 0.9] + [0.9] * 10
        flags = [stopper.update(v) for v in values]
        # five stagnant epochs, improve on the sixth, six more to stop
        self.assertEqual(flags.index(True), 11)

    def test_stopped_flag_is_sticky(self):
        stopper = EarlyStopper(patience=0)
        stopper.update(1.0)
        self.assertTrue(stopper.update(1.0))
        self.assertTrue(stopper.update(0.0))
        self.assertTrue(stopper.stopped)


class TestSharedImprovement(unittest.TestCase):
    def test_improved_is_strictly_lower(self):
        self.assertTrue(improved(0.9, 1.0))
        self.assertFalse(improved(1.0, 1.0))
        self.assertFalse(improved(1.1, 1.0))
        self.assertTrue(improved(0.5, np.inf))

    def test_scheduler_and_stopper_agree_on_every_epoch(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            # ties included so the strictness convention is exercised
            stream = rng.integers(0, 5, size=40) / 4.0
            sched = PlateauScheduler(1e-5, factor=0.2, patience=3)
            stopper = EarlyStopper(patience=10**9)
            for value in stream:
                sched.update(float(value))
                stopper.update(float(value))
                self.assertEqual(sched.best, stopper.best)


if __name__ == "__main__":
    unittest.main()
