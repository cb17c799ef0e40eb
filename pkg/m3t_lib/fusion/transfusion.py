"""
TransFusion encoder.

Image tokens (the flattened, projected F_att grid) query the keyword
context through multi-head cross-attention, followed by residual + layer
norm, a position-wise feed-forward network and a second residual + layer
norm. The output F' has one row per image token, whatever the keyword count.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.layers.attention import AttentionOutput, AttentionParams, multi_head_attention
from m3t_lib.layers.feed_forward import FeedForwardParams, feed_forward
from m3t_lib.layers.normalization import LayerNormParams
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor
from m3t_lib.visual.feature_map import FeatureMap

logger = logging.getLogger(__name__)

Regularizer = Callable[[Tensor], Tensor]


@dataclass
class TransFusionParams:
    w_in: Parameter             # C × d_model
    attention: AttentionParams  # queries d_model, keys/values d_emb
    ffn: FeedForwardParams
    norm_attention: LayerNormParams
    norm_output: LayerNormParams

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, model_dim: int, keyword_dim: int,
               heads: int, ff_dim: int) -> "TransFusionParams":
        return cls(
            w_in=ops.uniform_fan_in(rng, (channels, model_dim), channels),
            attention=AttentionParams.create(rng, model_dim, keyword_dim, model_dim, heads),
            ffn=FeedForwardParams.create(rng, model_dim, ff_dim),
            norm_attention=LayerNormParams.create(model_dim),
            norm_output=LayerNormParams.create(model_dim),
        )


class FusionOutput(NamedTuple):
    f_prime: Tensor             # L × d_model
    weights: List[Tensor]       # per head L × n


def _identity(x: Tensor) -> Tensor:
    return x


def image_tokens(f_att: FeatureMap, w_in: Tensor) -> Tensor:
    """Row-major flatten of the spatial grid, then a linear projection to d_model."""
    if w_in.ndim != 2 or w_in.shape[0] != f_att.channels:
        raise DimensionError(f"token projection {w_in.shape} does not match feature map {f_att.shape}")
    return ops.matmul(ops.reshape(f_att.values, (f_att.positions, f_att.channels)), w_in)


def cross_attention(q_src: Tensor, kv_src: Tensor, p: TransFusionParams) -> AttentionOutput:
    """Image-token queries attend over the n keyword rows."""
    if kv_src.shape[0] < 1:
        raise DimensionError("cross attention needs at least one keyword row")
    return multi_head_attention(q_src, kv_src, p.attention)


def encoder_block(tokens: Tensor, ke_att: Tensor, p: TransFusionParams,
                  dropout: Optional[Regularizer] = None) -> FusionOutput:
    """
    Z_norm = LN(tokens + Z); H = FFN(Z_norm); F' = LN(H + Z_norm).

    The residual uses the projected tokens since the per-head queries live in
    d_k rather than d_model.
    """
    dropout = dropout or _identity
    attended = cross_attention(tokens, ke_att, p)
    z_norm = p.norm_attention(ops.add(tokens, dropout(attended.output)))
    hidden = dropout(feed_forward(z_norm, p.ffn))
    return FusionOutput(p.norm_output(ops.add(hidden, z_norm)), attended.weights)


class TransFusionEncoder(Trainable):

    def __init__(self, channels: int, model_dim: int, keyword_dim: int, heads: int, ff_dim: int,
                 rng: np.random.Generator, dropout: Optional[Regularizer] = None):
        self.params = TransFusionParams.create(rng, channels, model_dim, keyword_dim, heads, ff_dim)
        self.dropout = dropout
        self.last_weights: Optional[List[np.ndarray]] = None

    def named_parameters(self) -> Parameters:
        return collect_parameters("fusion", self.params)

    def __call__(self, f_att: FeatureMap, ke_att: Tensor) -> FusionOutput:
        out = encoder_block(image_tokens(f_att, self.params.w_in), ke_att, self.params, self.dropout)
        self.last_weights = [w.numpy() for w in out.weights]
        return out
