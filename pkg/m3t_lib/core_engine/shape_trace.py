"""
Symbolic shape trace of the model.

Shapes are derived from the configuration alone, so the full profile can be
checked without allocating its weights. Symbolic extents: n keywords, T
decoder positions.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import pandas as pd

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.core_engine.config import ModelConfig
from m3t_lib.tensor import ops
from m3t_lib.visual.backbone import KERNEL, PADDING, STRIDE

logger = logging.getLogger(__name__)

Extent = Union[int, str]


@dataclass
class TraceStep:
    block: str
    tensor: str
    shape: Tuple[Extent, ...]
    parameters: int = 0

    def describe(self) -> str:
        return "×".join(str(e) for e in self.shape)


def _attention_parameters(query_dim: int, kv_dim: int, model_dim: int) -> int:
    # heads · d_k = model_dim for every projection
    return query_dim * model_dim + 2 * kv_dim * model_dim + model_dim * model_dim


def trace_shapes(config: ModelConfig, vocab_size: Optional[int] = None) -> List[TraceStep]:
    """
    Walks image → features → gate → fused tokens → logits.

    Raises:
        DimensionError: a stage does not produce the configured feature shape.
    """
    config.validate()
    m = config.model
    V = vocab_size or config.data.vocab_cap
    H, W, C = config.feature_shape
    steps: List[TraceStep] = []

    if m.backbone_mode == "conv":
        side, c_in = m.image_size, 3
        steps.append(TraceStep("input", "image", (side, side, 3)))
        for i, c_out in enumerate(m.stage_channels):
            side = ops.conv_output_size(side, KERNEL, STRIDE, PADDING)
            hidden = max(1, c_out // m.se_ratio)
            count = KERNEL * KERNEL * c_in * c_out + c_out + 2 * c_out * hidden + hidden + c_out
            steps.append(TraceStep(f"backbone.stage{i}", "conv+se", (side, side, c_out), count))
            c_in = c_out
        if (side, side, c_in) != (H, W, C):
            raise DimensionError(f"backbone produces {(side, side, c_in)}, configured features are {(H, W, C)}")
    steps.append(TraceStep("visual", "F", (H, W, C)))

    r = max(1, C // m.gate_reduction)
    c_int = max(1, C // 2)
    gate = C + 2 * C * r + 2 * r + 2 * C * c_int + c_int + c_int + 1
    steps.append(TraceStep("gate", "alpha", (H, W), gate if config.ablation.visual_attention else 0))
    steps.append(TraceStep("gate", "F_att", (H, W, C)))

    keywords = V * m.d_emb + (m.d_emb * m.d_emb if config.ablation.keyword_attention else 0)
    steps.append(TraceStep("keywords", "KE_att", ("n" if config.ablation.keywords else 1, m.d_emb),
                           keywords if config.ablation.keywords else 0))

    L, D = H * W, m.d_model
    fusion = C * D + _attention_parameters(D, m.d_emb, D) + 2 * D * m.encoder_ff_dim + 4 * D
    steps.append(TraceStep("fusion", "tokens", (L, D)))
    steps.append(TraceStep("fusion", "F'", (L, D), fusion))

    decoder = (V * D + 2 * _attention_parameters(D, D, D) + 2 * D * m.decoder_ff_dim
               + 6 * D + D * V + V)
    steps.append(TraceStep("decoder", "CE", ("T", D)))
    steps.append(TraceStep("decoder", "logits", ("T", V), decoder))
    return steps


def trace_frame(steps: List[TraceStep]) -> pd.DataFrame:
    return pd.DataFrame([{"block": s.block, "tensor": s.tensor, "shape": s.describe(),
                          "parameters": s.parameters} for s in steps])
