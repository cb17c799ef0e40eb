import unittest
import sys
import tempfile
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(project_root))

from m3t_lib.core.exceptions import ConfigError
from m3t_lib.core_engine.commands import cmd_init_config
from m3t_lib.core_engine.config import ABLATION_VARIANTS, AblationFlags, ModelConfig, profile_defaults
from m3t_lib.io.yaml_loader import ConfigLoader


class TestConfigLoader(unittest.TestCase):
    """
    Tests that ConfigLoader layers profile defaults, the YAML file,
    overrides and the environment into a validated ModelConfig.
    """

    def test_load_shipped_profiles(self):
        for profile in ("desk", "full"):
            path = project_root / "mission" / "profiles" / profile / "config.yml"
            self.assertTrue(path.is_file(), f"Profile file not found at {path}")
            config = ConfigLoader(str(path)).load(environ={})
            self.assertEqual(config.to_dict(), profile_defaults(profile).to_dict())

    def test_full_profile_dimensions(self):
        config = profile_defaults("full").validate()
        self.assertEqual(config.model.image_size, 356)
        self.assertEqual(config.feature_shape, (12, 12, 1280))
        self.assertEqual((config.model.d_emb, config.model.d_model, config.model.heads), (300, 512, 8))
        self.assertEqual(config.data.vocab_cap, 5000)
        self.assertEqual(config.max_positions, 51)

    def test_file_values_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.yml"
            path.write_text("training:\n  lr: 0.001\n  epochs: 3\n", encoding="utf-8")
            config = ConfigLoader(str(path)).load(["training.epochs=7", "model.stage_channels=[4, 8, 16, 64]"],
                                                  environ={})
        self.assertEqual(config.training.lr, 0.001)
        self.assertEqual(config.training.epochs, 7)
        self.assertEqual(config.model.stage_channels, [4, 8, 16, 64])

    def test_seed_from_environment(self):
        config = ConfigLoader().load(environ={"M3T_SEED": "17"})
        self.assertEqual(config.training.seed, 17)
        with self.assertRaises(ConfigError):
            ConfigLoader().load(environ={"M3T_SEED": "seventeen"})

    def test_unknown_keys_and_sections(self):
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({"optimizer": {"lr": 1.0}})
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({"training": {"learning_rate": 1.0}})
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["training.lr"])

    def test_type_errors(self):
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["training.epochs=2.5"])
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["training.prefetch=1"])

    def test_missing_and_malformed_files(self):
        with self.assertRaises(ConfigError):
            ConfigLoader("/nonexistent/run.yml")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.yml"
            path.write_text("training: [unclosed\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                ConfigLoader(str(path))

    def test_validation(self):
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["model.heads=3"]).validate()
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["training.dropout=1.0"]).validate()
        with self.assertRaises(ConfigError):
            profile_defaults("desk").apply_overrides(["data.min_description_len=40"]).validate()
        with self.assertRaises(ConfigError):
            profile_defaults("nope")

    def test_init_config_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = cmd_init_config("full", Path(tmp) / "full.yml")
            config = ConfigLoader(str(path)).load(environ={})
        self.assertEqual(config.to_dict(), profile_defaults("full").to_dict())


class TestAblationFlags(unittest.TestCase):

    def test_variant_names(self):
        for name in ABLATION_VARIANTS:
            self.assertEqual(AblationFlags.variant(name).variant_name(), name)

    def test_keyword_attention_without_keywords_is_rejected(self):
        flags = AblationFlags(visual_attention=True, keywords=False, keyword_attention=True)
        with self.assertRaises(ConfigError) as ctx:
            flags.validate()
        self.assertIn("image_only", str(ctx.exception))

    def test_unsupported_combination(self):
        with self.assertRaises(ConfigError):
            AblationFlags(visual_attention=False, keywords=True, keyword_attention=False).validate()
        with self.assertRaises(ConfigError):
            AblationFlags.variant("text_only")


if __name__ == '__main__':
    unittest.main()
