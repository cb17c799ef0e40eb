"""
The composed M3T model.

image ──backbone──> F ──lesion gate──> F_att ─┐
                                             ├─ TransFusion ──> F' ──decoder──> logits
keywords ──embeddings──> E ──attention──> KE_att ┘

Ablation switches remove the lesion gate (F_att = F), the keyword branch
(a single zero row stands in for KE_att) or only the keyword attention
(KE_att = E). Every block is always built from the same random stream, so
all variants start from the same initialisation; only the active blocks are
reported as trainable.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.core_engine.config import ModelConfig
from m3t_lib.data_processing.corpus import FEATURE_SUFFIX
from m3t_lib.data_processing.image import load_image
from m3t_lib.data_processing.vocabulary import UNK_ID
from m3t_lib.decoding.decoder import DecoderOutput, DescriptionDecoder
from m3t_lib.fusion.transfusion import TransFusionEncoder
from m3t_lib.keywords.keyword_encoder import KeywordEncoder
from m3t_lib.layers.dropout import DropoutScope
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Tensor, get_default_dtype
from m3t_lib.visual.backbone import SEConvBackbone
from m3t_lib.visual.feature_io import load_features
from m3t_lib.visual.feature_map import FeatureMap
from m3t_lib.visual.lesion_gate import LesionContextualGate

logger = logging.getLogger(__name__)

VisualInput = Union[np.ndarray, FeatureMap]


def load_visual_input(path: Union[str, Path], config: ModelConfig) -> VisualInput:
    """An M3TF file becomes a FeatureMap, anything else an image array."""
    if str(path).lower().endswith(FEATURE_SUFFIX):
        return load_features(path)
    return load_image(path, config.model.image_size)


class VisualInputCache:
    """Loads each image or feature file once."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._items: Dict[str, VisualInput] = {}

    def __call__(self, path: str) -> VisualInput:
        if path not in self._items:
            self._items[path] = load_visual_input(path, self.config)
        return self._items[path]


class M3TModel(Trainable):
    """
    Encoder-decoder over one (image, keywords) input.

    Args:
        config: The validated configuration.
        vocab_size: Size of the shared keyword / description vocabulary.
        seed: Initialisation seed; defaults to config.training.seed.
    """

    def __init__(self, config: ModelConfig, vocab_size: int, seed: Optional[int] = None):
        seed = config.training.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        m = config.model
        self.config = config
        self.vocab_size = vocab_size
        self.flags = config.ablation
        self.dropout = DropoutScope(config.training.dropout, seed)

        self.backbone = SEConvBackbone(config.backbone_config(), rng)
        self.gate = LesionContextualGate(m.feature_channels, m.gate_reduction, rng)
        self.keywords = KeywordEncoder(vocab_size, m.d_emb, rng, use_attention=self.flags.keyword_attention)
        self.fusion = TransFusionEncoder(m.feature_channels, m.d_model, m.d_emb, m.heads, m.encoder_ff_dim,
                                         rng, self.dropout)
        self.decoder = DescriptionDecoder(vocab_size, m.d_model, m.heads, m.decoder_ff_dim,
                                          config.max_positions, rng, self.dropout)
        logger.info(f"M3T model ({config.profile}, variant '{self.flags.variant_name()}') with "
                    f"{sum(p.size for p in self.parameters())} trainable values")

    # --- parameters and modes ---

    def _blocks(self, active_only: bool):
        blocks = []
        if self.backbone.cfg.mode == "conv":
            blocks.append(self.backbone)
        if self.flags.visual_attention or not active_only:
            blocks.append(self.gate)
        if self.flags.keywords or not active_only:
            blocks.append(self.keywords)
        blocks += [self.fusion, self.decoder]
        return blocks

    def named_parameters(self) -> Parameters:
        found: Parameters = {}
        for block in self._blocks(active_only=True):
            found.update(block.named_parameters())
        return found

    def state_parameters(self) -> Parameters:
        found: Parameters = {}
        for block in self._blocks(active_only=False):
            found.update(block.named_parameters())
        if not self.flags.keyword_attention:
            found["keywords.w_ke"] = self.keywords.attention.w_ke
        return found

    def train(self):
        super().train()
        self.dropout.training = True
        return self

    def eval(self):
        super().eval()
        self.dropout.training = False
        return self

    def begin_step(self, step: int):
        self.dropout.begin_step(step)

    # --- forward ---

    def visual_features(self, image: VisualInput) -> FeatureMap:
        if isinstance(image, FeatureMap):
            f = image
            if f.values.dtype != get_default_dtype():
                f = FeatureMap(Tensor(f.values.data, dtype=get_default_dtype()))
        else:
            f = self.backbone(Tensor(image))
        if f.shape != self.config.feature_shape:
            raise DimensionError(f"visual features {f.shape} do not match the configured {self.config.feature_shape}")
        return f

    def keyword_context(self, keyword_ids: Sequence[int]) -> Tensor:
        if not self.flags.keywords:
            return ops.constant(np.zeros((1, self.config.model.d_emb)))
        ids = list(keyword_ids) if len(keyword_ids) else [UNK_ID]
        return self.keywords(ids)

    def encode(self, image: VisualInput, keyword_ids: Sequence[int]) -> Tensor:
        """F' for one input, [L × d_model]."""
        f = self.visual_features(image)
        f_att = self.gate(f).features if self.flags.visual_attention else f
        return self.fusion(f_att, self.keyword_context(keyword_ids)).f_prime

    def decode_step(self, input_ids: Sequence[int], f_prime: Tensor) -> DecoderOutput:
        return self.decoder(input_ids, f_prime)

    def forward(self, image: VisualInput, keyword_ids: Sequence[int], input_ids: Sequence[int]) -> Tensor:
        """Teacher-forced logits [T × V]."""
        return self.decode_step(input_ids, self.encode(image, keyword_ids)).logits

    def next_token_logits(self, prefix: Sequence[int], f_prime: Tensor) -> np.ndarray:
        return self.decode_step(prefix, f_prime).logits.data[-1]

    @property
    def last_gate_map(self) -> Optional[np.ndarray]:
        return self.gate.last_alpha if self.flags.visual_attention else None
