"""
Shared helpers for the test suite: a miniature configuration and a small
synthetic corpus written to a temporary directory.
"""
import sys
from pathlib import Path

project_root = Path(__file__).resolve().parents[1]
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from m3t_lib.core_engine.config import ModelConfig, profile_defaults
from m3t_lib.data_processing.synthetic import generate_synthetic_corpus, write_synthetic_corpus

TINY_OVERRIDES = [
    "model.image_size=8",
    "model.stage_channels=[4, 8]",
    "model.se_ratio=2",
    "model.feature_height=2",
    "model.feature_width=2",
    "model.feature_channels=8",
    "model.gate_reduction=2",
    "model.d_emb=6",
    "model.d_model=8",
    "model.heads=2",
    "model.encoder_ff_dim=8",
    "model.decoder_ff_dim=8",
    "data.vocab_cap=60",
    "data.min_freq=1",
    "data.min_description_len=3",
    "data.max_description_len=30",
    "training.lr=0.01",
    "training.batch_size=4",
    "training.dropout=0.1",
    "training.epochs=2",
    "training.prefetch=false",
    "evaluation.max_decode_len=12",
]


def tiny_config(output_dir: Path = None, *extra: str) -> ModelConfig:
    """A desk-profile config shrunk to 8×8 images and 8-wide states."""
    config = profile_defaults("desk").apply_overrides(TINY_OVERRIDES + list(extra))
    if output_dir is not None:
        config.paths.output_dir = str(output_dir)
    return config.validate()


def write_tiny_corpus(out_dir: Path, n: int = 20, seed: int = 0, image_size: int = 8) -> Path:
    return write_synthetic_corpus(generate_synthetic_corpus(n, seed, image_size), out_dir)
