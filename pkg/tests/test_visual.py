import math
import unittest
import sys
import tempfile
from pathlib import Path

import numpy as np

# Add the project root to the Python path
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import ConfigError, DimensionError, FeatureFormatError
from m3t_lib.data_processing.image import decode_netpbm
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Tensor, precision
from m3t_lib.visual.backbone import BackboneConfig, SEConvBackbone
from m3t_lib.visual.feature_io import decode_features, encode_features, load_features, save_features
from m3t_lib.visual.feature_map import FeatureMap
from m3t_lib.visual.heatmap import export_gate_heatmap, normalize_heatmap, render_overlay, sidecar_path
from m3t_lib.visual.lesion_gate import (LesionContextualGate, LesionGateParams, channel_context,
                                        contextual_gate, global_attention_pool, pooling_weights)


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _gate_by_loops(f, p):
    """Pooling weights, pooled vector, context map and gate map from explicit sums."""
    H, W, C = f.shape
    w_ctx, w1, w2 = p.w_context.data, p.w1.data, p.w2.data
    gamma, beta = p.ln_gamma.data, p.ln_beta.data
    w_x, w_g, b_xg, w_psi, b_psi = p.w_x.data, p.w_g.data, p.b_xg.data, p.w_psi.data, p.b_psi.data[0]
    scores = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            scores[i, j] = sum(f[i, j, c] * w_ctx[c, 0] for c in range(C))
    top = scores.max()
    exps = np.array([[math.exp(scores[i, j] - top) for j in range(W)] for i in range(H)])
    weights = exps / exps.sum()
    pooled = np.zeros(C)
    for c in range(C):
        pooled[c] = sum(weights[i, j] * f[i, j, c] for i in range(H) for j in range(W))
    hidden = [max(0.0, sum(pooled[c] * w1[c, k] for c in range(C))) for k in range(w1.shape[1])]
    mean = sum(hidden) / len(hidden)
    var = sum((h - mean) ** 2 for h in hidden) / len(hidden)
    normed = [(h - mean) / math.sqrt(var + 1e-5) * gamma[k] + beta[k] for k, h in enumerate(hidden)]
    context = [sum(normed[k] * w2[k, c] for k in range(len(normed))) for c in range(C)]
    f_c = np.zeros_like(f)
    alpha = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for c in range(C):
                f_c[i, j, c] = f[i, j, c] + context[c]
            logit = b_psi
            for k in range(w_x.shape[1]):
                pre = b_xg[k] + sum(f[i, j, c] * w_x[c, k] + f_c[i, j, c] * w_g[c, k] for c in range(C))
                logit += w_psi[k, 0] * max(0.0, pre)
            alpha[i, j] = _sigmoid(logit)
    return weights, pooled, f_c, alpha


class TestBackbone(unittest.TestCase):

    def test_desk_backbone_shape(self):
        backbone = SEConvBackbone(BackboneConfig(), np.random.default_rng(0))
        image = Tensor(np.random.default_rng(1).uniform(size=(64, 64, 3)))
        self.assertEqual(backbone(image).shape, (4, 4, 64))

    def test_full_profile_stage_sizes(self):
        cfg = BackboneConfig(input_size=356, stage_channels=[32, 64, 128, 256, 1280],
                             feature_shape=(12, 12, 1280))
        cfg.validate()
        self.assertEqual(cfg.stage_sizes(), [178, 89, 45, 23, 12])

    def test_inconsistent_feature_shape(self):
        with self.assertRaises(ConfigError):
            BackboneConfig(input_size=64, feature_shape=(8, 8, 64)).validate()

    def test_wrong_image_size(self):
        backbone = SEConvBackbone(BackboneConfig(), np.random.default_rng(0))
        with self.assertRaises(DimensionError):
            backbone(Tensor(np.zeros((32, 32, 3))))

    def test_precomputed_mode_has_no_parameters(self):
        backbone = SEConvBackbone(BackboneConfig(mode="precomputed"), np.random.default_rng(0))
        self.assertEqual(backbone.named_parameters(), {})
        with self.assertRaises(ConfigError):
            backbone(Tensor(np.zeros((64, 64, 3))))

    def test_parameter_names(self):
        names = SEConvBackbone(BackboneConfig(), np.random.default_rng(0)).named_parameters()
        self.assertIn("backbone.stage0.w", names)
        self.assertIn("backbone.stage3.se.w2", names)


class TestLesionContextualGate(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def _map(self, h=3, w=4, c=8):
        return FeatureMap(Tensor(self.rng.normal(size=(h, w, c))))

    def test_zero_context_weights_give_uniform_pooling(self):
        with precision("float64"):
            f = self._map()
            p = LesionGateParams.create(self.rng, 8)
            p.w_context.data[:] = 0.0
            weights = pooling_weights(f, p).data
            pooled = global_attention_pool(f, p).data
        np.testing.assert_allclose(weights, np.full((1, 12), 1 / 12))
        np.testing.assert_allclose(pooled, f.values.data.reshape(12, 8).mean(axis=0), atol=1e-12)

    def test_zero_bottleneck_leaves_features_unchanged(self):
        with precision("float64"):
            f = self._map()
            p = LesionGateParams.create(self.rng, 8)
            p.w1.data[:] = 0.0
            p.ln_beta.data[:] = 0.0
            f_c = channel_context(f, global_attention_pool(f, p), p)
        np.testing.assert_array_equal(f_c.values.data, f.values.data)

    def test_gate_coefficients_are_in_open_unit_interval(self):
        f = self._map()
        out = contextual_gate(f, LesionGateParams.create(self.rng, 8))
        alpha = out.alpha.data
        self.assertEqual(alpha.shape, (3, 4))
        self.assertTrue(np.all(alpha > 0) and np.all(alpha < 1))
        np.testing.assert_allclose(out.features.values.data, f.values.data * alpha[:, :, None], rtol=1e-6)

    def test_zero_psi_gives_half(self):
        p = LesionGateParams.create(self.rng, 8)
        p.w_psi.data[:] = 0.0
        alpha = contextual_gate(self._map(), p).alpha.data
        np.testing.assert_allclose(alpha, 0.5)

    def _random_gate(self, c=4):
        with precision("float64"):
            p = LesionGateParams.create(self.rng, c, reduction=2)
            p.ln_gamma.data[:] = self.rng.uniform(0.5, 1.5, size=p.ln_gamma.shape)
            p.ln_beta.data[:] = self.rng.normal(size=p.ln_beta.shape)
            p.b_xg.data[:] = self.rng.normal(scale=0.1, size=p.b_xg.shape)
            p.b_psi.data[:] = 0.3
        return p

    def test_pooling_matches_scalar_loops(self):
        p = self._random_gate()
        with precision("float64"):
            f = self._map(3, 3, 4)
            weights = pooling_weights(f, p).data
            pooled = global_attention_pool(f, p).data
        expected_weights, expected_pooled, _, _ = _gate_by_loops(f.values.data, p)
        np.testing.assert_allclose(weights.reshape(3, 3), expected_weights, rtol=1e-12)
        np.testing.assert_allclose(pooled, expected_pooled, rtol=1e-12, atol=1e-14)

    def test_channel_context_matches_scalar_loops(self):
        p = self._random_gate()
        with precision("float64"):
            f = self._map(3, 3, 4)
            f_c = channel_context(f, global_attention_pool(f, p), p).values.data
        _, _, expected, _ = _gate_by_loops(f.values.data, p)
        np.testing.assert_allclose(f_c, expected, rtol=1e-10, atol=1e-12)

    def test_gate_matches_scalar_loops(self):
        p = self._random_gate()
        with precision("float64"):
            f = self._map(3, 3, 4)
            out = contextual_gate(f, p)
        _, _, _, alpha = _gate_by_loops(f.values.data, p)
        np.testing.assert_allclose(out.alpha.data, alpha, rtol=1e-10)
        np.testing.assert_allclose(out.features.values.data, f.values.data * alpha[:, :, None], rtol=1e-10)

    def test_scaling_context_weights_keeps_the_pooling_argmax(self):
        p = self._random_gate()
        with precision("float64"):
            f = self._map(3, 3, 4)
            base = int(np.argmax(pooling_weights(f, p).data))
            original = p.w_context.data.copy()
            for s in (0.25, 2.0, 10.0):
                p.w_context.data[:] = original * s
                self.assertEqual(int(np.argmax(pooling_weights(f, p).data)), base)

    def test_saturated_gate_passes_features_through(self):
        p = self._random_gate()
        p.b_psi.data[:] = 50.0
        with precision("float64"):
            f = self._map(3, 3, 4)
            out = contextual_gate(f, p)
        np.testing.assert_allclose(out.features.values.data, f.values.data, rtol=0, atol=1e-9)
        self.assertTrue(np.all(out.alpha.data < 1.0))

    def test_single_precision_gate_stays_inside_the_unit_interval(self):
        f = self._map(2, 2, 8)
        p = LesionGateParams.create(self.rng, 8)
        for bias in (30.0, -120.0):
            p.b_psi.data[:] = bias
            alpha = contextual_gate(f, p).alpha.data
            self.assertEqual(alpha.dtype, np.float32)
            self.assertTrue(np.all(alpha > 0) and np.all(alpha < 1), f"b_psi={bias}: {alpha}")

    def test_channel_mismatch(self):
        with self.assertRaises(DimensionError):
            contextual_gate(self._map(c=6), LesionGateParams.create(self.rng, 8))

    def test_wrapper_keeps_last_map(self):
        gate = LesionContextualGate(8, 4, self.rng)
        gate(self._map())
        self.assertEqual(gate.last_alpha.shape, (3, 4))
        self.assertIn("gate.w_context", gate.named_parameters())


class TestFeatureFiles(unittest.TestCase):

    def test_round_trip_is_bit_exact(self):
        values = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(np.float32)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "f.m3tf"
            save_features(FeatureMap(Tensor(values)), path)
            loaded = load_features(path)
        np.testing.assert_array_equal(loaded.values.data, values)

    def test_bad_magic(self):
        blob = bytearray(encode_features(np.zeros((1, 1, 1))))
        blob[:4] = b"XXXX"
        with self.assertRaises(FeatureFormatError):
            decode_features(bytes(blob))

    def test_truncated_payload_and_trailing_bytes(self):
        blob = encode_features(np.zeros((2, 2, 2)))
        with self.assertRaises(FeatureFormatError) as ctx:
            decode_features(blob[:-4])
        self.assertIn("truncated", str(ctx.exception))
        with self.assertRaises(FeatureFormatError) as ctx:
            decode_features(blob + b"\0\0\0\0")
        self.assertIn("trailing", str(ctx.exception))

    def test_wrong_rank_on_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "f.m3tf"
            path.write_bytes(encode_features(np.zeros((2, 2))))
            with self.assertRaises(FeatureFormatError):
                load_features(path)


class TestHeatmap(unittest.TestCase):

    def test_normalisation(self):
        np.testing.assert_array_equal(normalize_heatmap(np.array([[0.2, 0.6], [0.4, 0.2]])),
                                      [[0, 255], [128, 0]])
        np.testing.assert_array_equal(normalize_heatmap(np.full((2, 2), 0.3)), np.zeros((2, 2)))

    def test_export_writes_pgm_and_sidecar(self):
        alpha = np.array([[0.1, 0.9, 0.5], [0.3, 0.7, 0.2]])
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "gate.pgm"
            sidecar = export_gate_heatmap(alpha, out)
            self.assertEqual(sidecar, sidecar_path(out))
            pixels = decode_netpbm(out.read_bytes())
            values = np.loadtxt(sidecar, delimiter="\t")
        self.assertEqual(pixels.shape, (2, 3))
        self.assertEqual(pixels.max(), 255)
        np.testing.assert_allclose(values, alpha)

    def test_export_rejects_non_2d(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DimensionError):
                export_gate_heatmap(np.zeros((2, 2, 2)), Path(tmp) / "x.pgm")

    def test_overlay_png(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "overlay.png"
            render_overlay(np.random.default_rng(0).uniform(size=(16, 16, 3)), np.eye(4), out)
            self.assertTrue(out.exists())
            self.assertEqual(out.read_bytes()[:4], b"\x89PNG")


if __name__ == '__main__':
    unittest.main()
