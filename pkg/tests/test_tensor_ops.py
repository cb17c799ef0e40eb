import unittest
import sys
from pathlib import Path

import numpy as np

# Add the project root to the Python path
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import ContractError, DimensionError, NumericError, TokenIndexError
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor, precision


def _direct_conv(x, w, b, stride, padding):
    """Direct summation over output positions, kernel taps and channels."""
    k, _, cin, cout = w.shape
    padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    Ho = (x.shape[0] + 2 * padding - k) // stride + 1
    Wo = (x.shape[1] + 2 * padding - k) // stride + 1
    out = np.zeros((Ho, Wo, cout))
    for i in range(Ho):
        for j in range(Wo):
            for o in range(cout):
                total = b[o]
                for di in range(k):
                    for dj in range(k):
                        for c in range(cin):
                            total += padded[i * stride + di, j * stride + dj, c] * w[di, dj, c, o]
                out[i, j, o] = total
    return out


class TestLinearAlgebra(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_matmul_matches_numpy(self):
        with precision("float64"):
            a, b = self.rng.normal(size=(3, 4)), self.rng.normal(size=(4, 5))
            out = ops.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, a @ b, rtol=1e-12)

    def test_matmul_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(DimensionError) as ctx:
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        self.assertIn("(2, 3)", str(ctx.exception))
        self.assertIn("(4, 2)", str(ctx.exception))

    def test_conv2d_matches_direct_summation(self):
        with precision("float64"):
            x = self.rng.normal(size=(7, 6, 2))
            w = self.rng.normal(size=(3, 3, 2, 4))
            b = self.rng.normal(size=4)
            out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        np.testing.assert_allclose(out.data, _direct_conv(x, w, b, 2, 1), rtol=1e-10, atol=1e-12)
        self.assertEqual(out.shape, (4, 3, 4))

    def test_pointwise_conv_equals_flattened_matmul(self):
        with precision("float64"):
            x = Tensor(self.rng.normal(size=(3, 4, 5)))
            w = Tensor(self.rng.normal(size=(5, 2)))
            b = Tensor(self.rng.normal(size=2))
            out = ops.pointwise_conv(x, w, b)
        expected = (x.data.reshape(12, 5) @ w.data + b.data).reshape(3, 4, 2)
        np.testing.assert_array_equal(out.data, expected)

    def test_concat_and_transpose(self):
        a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 1)))
        self.assertEqual(ops.concat([a, b], axis=1).shape, (2, 4))
        self.assertEqual(ops.transpose(Tensor(np.ones((2, 3, 4))), (2, 0, 1)).shape, (4, 2, 3))
        with self.assertRaises(DimensionError):
            ops.concat([a, Tensor(np.ones((3, 1)))], axis=1)


class TestBroadcasting(unittest.TestCase):

    def test_bias_and_scalar_broadcast(self):
        x = Tensor(np.ones((2, 3)))
        self.assertEqual(ops.add(x, Tensor(np.arange(3.0))).shape, (2, 3))
        self.assertEqual(ops.mul(x, Tensor(np.array([2.0]))).data.sum(), 12.0)

    def test_other_mismatches_are_rejected(self):
        x = Tensor(np.ones((2, 3)))
        with self.assertRaises(DimensionError):
            ops.add(x, Tensor(np.ones(2)))
        with self.assertRaises(DimensionError):
            ops.mul(x, Tensor(np.ones((1, 3))))


class TestNormalisation(unittest.TestCase):

    def test_softmax_rows_sum_to_one_and_are_stable(self):
        x = Tensor(np.array([[1000.0, 1000.0], [-5.0, 5.0]]))
        y = ops.softmax(x, axis=-1).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-6)
        np.testing.assert_allclose(y[0], [0.5, 0.5])

    def test_softmax_rejects_non_finite_input(self):
        with self.assertRaises(NumericError):
            ops.softmax(Tensor(np.array([[np.nan, 1.0]])))

    def test_layer_norm_zero_mean_unit_variance(self):
        with precision("float64"):
            x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(4, 16)))
            y = ops.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-4)


class TestLossAndLookups(unittest.TestCase):

    def test_cross_entropy_ignores_padding(self):
        with precision("float64"):
            logits = np.random.default_rng(1).normal(size=(3, 5))
            full = ops.cross_entropy(Tensor(logits), [1, 2, 0], pad_id=0).item()
            trimmed = ops.cross_entropy(Tensor(logits[:2]), [1, 2], pad_id=0).item()
        self.assertAlmostEqual(full, trimmed, places=12)

    def test_cross_entropy_of_uniform_logits_is_log_v(self):
        loss = ops.cross_entropy(Tensor(np.zeros((4, 8))), [1, 2, 3, 4], pad_id=0).item()
        self.assertAlmostEqual(loss, np.log(8), places=5)

    def test_cross_entropy_of_a_single_class_is_zero(self):
        loss = ops.cross_entropy(Tensor(np.array([[3.0], [-2.0]])), [0, 0], pad_id=-1).item()
        self.assertEqual(loss, 0.0)

    def test_cross_entropy_all_padding_is_an_error(self):
        with self.assertRaises(ContractError):
            ops.cross_entropy(Tensor(np.zeros((2, 4))), [0, 0], pad_id=0)

    def test_embedding_lookup_rejects_out_of_range_ids(self):
        table = Parameter(np.zeros((4, 2)))
        with self.assertRaises(TokenIndexError):
            ops.embedding_lookup(table, [0, 4])

    def test_masked_fill(self):
        x = Tensor(np.ones((2, 2)))
        mask = np.array([[True, False], [False, False]])
        self.assertEqual(ops.masked_fill(x, mask, -1e9).data[0, 0], np.float32(-1e9))


class TestDropout(unittest.TestCase):

    def test_identity_when_rate_zero_or_eval(self):
        x = Tensor(np.ones((3, 3)))
        self.assertIs(ops.dropout(x, 0.0, seed=1), x)
        self.assertIs(ops.dropout(x, 0.5, seed=1, training=False), x)

    def test_mask_is_reproducible_and_scaled(self):
        x = Tensor(np.ones((50, 50)))
        a = ops.dropout(x, 0.2, seed=7).data
        b = ops.dropout(x, 0.2, seed=7).data
        np.testing.assert_array_equal(a, b)
        self.assertTrue(set(np.unique(a)).issubset({0.0, np.float32(1.25)}))

    def test_rate_outside_range(self):
        with self.assertRaises(ContractError):
            ops.dropout(Tensor(np.ones(2)), 1.0, seed=0)


if __name__ == '__main__':
    unittest.main()
