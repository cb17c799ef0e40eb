"""
Autoregressive description decoder.

Token embeddings plus a fixed sinusoidal position table feed one decoder
layer: masked self-attention, cross-attention from description states to
the fused image features F', and a feed-forward network, each followed by
residual + layer norm. A final projection yields vocabulary logits.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from m3t_lib.core.exceptions import DimensionError, SequenceLengthError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.layers.attention import AttentionParams, causal_mask, multi_head_attention
from m3t_lib.layers.feed_forward import FeedForwardParams, feed_forward
from m3t_lib.layers.normalization import LayerNormParams
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

Regularizer = Callable[[Tensor], Tensor]


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    """PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(t / 10000^(2i/d))."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


@dataclass
class DecoderParams:
    token_table: Parameter           # V × d_model
    positions: Tensor                # T_max × d_model, fixed
    self_attention: AttentionParams
    cross_attention: AttentionParams
    ffn: FeedForwardParams
    norm_self: LayerNormParams
    norm_cross: LayerNormParams
    norm_output: LayerNormParams
    w_out: Parameter                 # d_model × V
    b_out: Parameter                 # V

    @classmethod
    def create(cls, rng: np.random.Generator, vocab_size: int, model_dim: int, heads: int,
               ff_dim: int, max_positions: int) -> "DecoderParams":
        return cls(
            token_table=ops.uniform_fan_in(rng, (vocab_size, model_dim), model_dim),
            positions=ops.constant(sinusoidal_table(max_positions, model_dim)),
            self_attention=AttentionParams.create(rng, model_dim, model_dim, model_dim, heads),
            cross_attention=AttentionParams.create(rng, model_dim, model_dim, model_dim, heads),
            ffn=FeedForwardParams.create(rng, model_dim, ff_dim),
            norm_self=LayerNormParams.create(model_dim),
            norm_cross=LayerNormParams.create(model_dim),
            norm_output=LayerNormParams.create(model_dim),
            w_out=ops.uniform_fan_in(rng, (model_dim, vocab_size), model_dim),
            b_out=Parameter(np.zeros(vocab_size)),
        )

    @property
    def max_positions(self) -> int:
        return self.positions.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]


class DecoderOutput(NamedTuple):
    logits: Tensor                   # T × V
    self_weights: List[Tensor]
    cross_weights: List[Tensor]


def _identity(x: Tensor) -> Tensor:
    return x


def embed_positions(ids: Sequence[int], p: DecoderParams) -> Tensor:
    """CE[t] = E_c[ids[t]] + PE_c[t]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError(f"token ids must be 1-D, got shape {ids.shape}")
    if ids.shape[0] > p.max_positions:
        raise SequenceLengthError(
            f"sequence of {ids.shape[0]} tokens exceeds the positional table of {p.max_positions}")
    table = p.token_table
    pe = ops.constant(p.positions.data[: ids.shape[0]], dtype=table.dtype)
    return ops.add(ops.embedding_lookup(table, ids), pe)


def decoder_forward(ids: Sequence[int], f_prime: Tensor, p: DecoderParams,
                    dropout: Optional[Regularizer] = None) -> DecoderOutput:
    """
    Runs the decoder layer over a full (teacher-forced or partial) sequence.

    Args:
        ids: Input token ids [T], T >= 1, starting with BOS.
        f_prime: Fused image features [L × d_model].
        p: Decoder parameters.
        dropout: Optional regularizer applied after each sub-layer.

    Returns:
        Logits [T × V] and the attention weights of both attention blocks.
    """
    if len(ids) < 1:
        raise DimensionError("decoder needs at least one input token")
    dropout = dropout or _identity
    ce = embed_positions(ids, p)
    T = ce.shape[0]

    masked = multi_head_attention(ce, ce, p.self_attention, mask=causal_mask(T))
    z1 = p.norm_self(ops.add(ce, dropout(masked.output)))
    # queries from the description states, keys/values from F'; no mask over image tokens
    crossed = multi_head_attention(z1, f_prime, p.cross_attention)
    z2 = p.norm_cross(ops.add(dropout(crossed.output), z1))
    hidden = dropout(feed_forward(z2, p.ffn))
    final = p.norm_output(ops.add(hidden, z2))
    logits = ops.add(ops.matmul(final, p.w_out), p.b_out)
    return DecoderOutput(logits, masked.weights, crossed.weights)


class DescriptionDecoder(Trainable):

    def __init__(self, vocab_size: int, model_dim: int, heads: int, ff_dim: int, max_positions: int,
                 rng: np.random.Generator, dropout: Optional[Regularizer] = None):
        self.params = DecoderParams.create(rng, vocab_size, model_dim, heads, ff_dim, max_positions)
        self.dropout = dropout

    def named_parameters(self) -> Parameters:
        return collect_parameters("decoder", self.params)

    def __call__(self, ids: Sequence[int], f_prime: Tensor) -> DecoderOutput:
        return decoder_forward(ids, f_prime, self.params, self.dropout)
