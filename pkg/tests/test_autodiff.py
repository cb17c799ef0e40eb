import unittest
import sys
import threading
from pathlib import Path

import numpy as np

# Add the project root to the Python path
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import ContractError, DimensionError
from m3t_lib.tensor import ops
from m3t_lib.tensor.gradcheck import finite_diff_check, numeric_gradient, relative_error
from m3t_lib.tensor.optim import AdamState, adam_step
from m3t_lib.tensor.tensor import (Parameter, Tape, Tensor, active_tape, backward, get_default_dtype,
                                   no_grad, precision)


class TestTape(unittest.TestCase):
    """
    Tests the recording and reverse traversal of the computation tape.
    """

    def test_gradient_of_shared_input_accumulates(self):
        x = Parameter(np.array([1.0, 2.0, 3.0]))
        with Tape():
            y = ops.reduce_sum(ops.add(ops.mul(x, x), x))
            backward(y)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_no_grad_suspends_recording(self):
        x = Parameter(np.ones(3))
        with Tape() as tape:
            with no_grad():
                self.assertIsNone(active_tape())
                y = ops.scale(x, 2.0)
            self.assertIs(active_tape(), tape)
        self.assertFalse(y.requires_grad)
        self.assertEqual(len(tape), 0)

    def test_nested_tapes_are_rejected(self):
        with Tape():
            with self.assertRaises(ContractError):
                with Tape():
                    pass

    def test_tape_is_consumed_by_backward(self):
        x = Parameter(np.ones(2))
        with Tape():
            y = ops.reduce_sum(x)
            backward(y)
            with self.assertRaises(ContractError):
                backward(y)

    def test_backward_needs_scalar(self):
        x = Parameter(np.ones(2))
        with Tape():
            with self.assertRaises(ContractError):
                backward(ops.scale(x, 1.0))

    def test_tapes_are_thread_local(self):
        seen = []

        def worker():
            seen.append(active_tape())

        with Tape():
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        self.assertEqual(seen, [None])

    def test_precision_context_restores_dtype(self):
        before = get_default_dtype()
        with precision("float64"):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(get_default_dtype(), before)


class TestFiniteDifferences(unittest.TestCase):

    def test_numeric_gradient_of_cubic(self):
        with precision("float64"):
            x = Parameter(np.array([0.5, -1.5, 2.0]))
            grad = numeric_gradient(lambda: ops.reduce_sum(ops.mul(ops.mul(x, x), x)), x)
        np.testing.assert_allclose(grad, 3 * x.data ** 2, rtol=1e-10)

    def test_two_point_stencil(self):
        with precision("float64"):
            x = Parameter(np.array([0.3, 0.7]))
            grad = numeric_gradient(lambda: ops.reduce_sum(ops.sigmoid(x)), x, order=2)
        s = 1 / (1 + np.exp(-x.data))
        np.testing.assert_allclose(grad, s * (1 - s), rtol=1e-6)

    def test_unsupported_stencil(self):
        x = Parameter(np.ones(1))
        with self.assertRaises(ContractError):
            numeric_gradient(lambda: ops.reduce_sum(x), x, order=3)

    def test_finite_diff_check_on_softmax_layer_norm(self):
        rng = np.random.default_rng(5)
        with precision("float64"):
            weights = Tensor(rng.normal(size=(3, 6)))
            gamma, beta = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))

            def f(x):
                y = ops.softmax(ops.layer_norm(x, gamma, beta), axis=-1)
                return ops.reduce_sum(ops.mul(y, weights))

            error = finite_diff_check(f, Parameter(rng.normal(size=(3, 6))))
        self.assertLess(error, 1e-6)

    def test_relative_error_floor(self):
        self.assertEqual(relative_error(np.zeros(3), np.zeros(3)), 0.0)
        self.assertAlmostEqual(relative_error(np.array([1e-9]), np.array([0.0])), 0.1)

    def test_step_must_be_positive(self):
        with self.assertRaises(ContractError):
            finite_diff_check(lambda x: ops.reduce_sum(x), Parameter(np.ones(2)), step=0.0)


class TestAdam(unittest.TestCase):

    def test_first_step_matches_closed_form(self):
        with precision("float64"):
            p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.array([0.5, -0.1])
        state = AdamState(lr=0.1)
        adam_step({"p": p}, state)
        # bias-corrected first step moves every entry by lr·sign(g) (up to eps)
        np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)
        self.assertIsNone(p.grad)
        self.assertEqual(state.step, 1)

    def test_two_steps_follow_the_recurrence(self):
        with precision("float64"):
            p = Parameter(np.array([0.0]))
        state = AdamState(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        m = v = 0.0
        value = 0.0
        for t, g in enumerate([1.0, 3.0], start=1):
            p.grad = np.array([g])
            adam_step({"p": p}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            value -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        self.assertAlmostEqual(float(p.data[0]), value, places=12)

    def test_ten_steps_on_a_parabola(self):
        with precision("float64"):
            x = Parameter(np.array([1.5, -0.4]))
        state = AdamState(lr=0.05)
        expected = x.data.copy()
        m = np.zeros(2)
        v = np.zeros(2)
        for t in range(1, 11):
            with Tape():
                backward(ops.reduce_sum(ops.mul(x, x)))
            adam_step({"x": x}, state)
            g = 2 * expected
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            expected = expected - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(x.data, expected, rtol=0, atol=1e-12)
        self.assertEqual(state.step, 10)

    def test_missing_gradient_is_an_error(self):
        p = Parameter(np.ones(2))
        with self.assertRaises(ContractError):
            adam_step({"p": p}, AdamState())

    def test_moment_shape_mismatch(self):
        p = Parameter(np.ones(2))
        p.grad = np.ones(2)
        state = AdamState(first_moment={"p": np.zeros(3)}, second_moment={"p": np.zeros(3)})
        with self.assertRaises(DimensionError):
            adam_step({"p": p}, state)


if __name__ == '__main__':
    unittest.main()
