"""
Multi-head scaled dot-product attention.

Used three ways: image tokens attending over keywords (fusion encoder),
masked self-attention over description tokens and decoder-to-image
cross-attention. Projections carry no biases.
"""
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from m3t_lib.core.exceptions import ConfigError, DimensionError
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor

MASK_VALUE = -1e9


@dataclass
class AttentionParams:
    """Per-head query/key/value projections and the output merge."""
    w_q: List[Parameter]   # heads × [query_dim × d_k]
    w_k: List[Parameter]   # heads × [kv_dim × d_k]
    w_v: List[Parameter]   # heads × [kv_dim × d_k]
    w_o: Parameter         # (heads·d_k) × model_dim

    @classmethod
    def create(cls, rng: np.random.Generator, query_dim: int, kv_dim: int,
               model_dim: int, heads: int) -> "AttentionParams":
        if heads < 1 or model_dim % heads != 0:
            raise ConfigError(f"model dimension {model_dim} is not divisible by {heads} heads")
        d_k = model_dim // heads
        return cls(
            w_q=[ops.uniform_fan_in(rng, (query_dim, d_k), query_dim) for _ in range(heads)],
            w_k=[ops.uniform_fan_in(rng, (kv_dim, d_k), kv_dim) for _ in range(heads)],
            w_v=[ops.uniform_fan_in(rng, (kv_dim, d_k), kv_dim) for _ in range(heads)],
            w_o=ops.uniform_fan_in(rng, (heads * d_k, model_dim), heads * d_k),
        )

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def key_dim(self) -> int:
        return self.w_q[0].shape[1]


class AttentionOutput(NamedTuple):
    output: Tensor          # L_q × model_dim
    weights: List[Tensor]   # one L_q × L_k probability matrix per head


def multi_head_attention(query_src: Tensor, kv_src: Tensor, params: AttentionParams,
                         mask: Optional[np.ndarray] = None) -> AttentionOutput:
    """
    Attends from every row of `query_src` over the rows of `kv_src`.

    Args:
        query_src: Query-side states [L_q × query_dim].
        kv_src: Key/value-side states [L_k × kv_dim], L_k >= 1.
        params: Projection weights.
        mask: Optional boolean [L_q × L_k]; False entries receive no attention.

    Returns:
        The merged head outputs and the per-head attention weights.
    """
    if query_src.ndim != 2 or kv_src.ndim != 2:
        raise DimensionError(f"attention expects 2-D inputs, got {query_src.shape} and {kv_src.shape}")
    if kv_src.shape[0] < 1:
        raise DimensionError("attention needs at least one key")
    if query_src.shape[1] != params.w_q[0].shape[0] or kv_src.shape[1] != params.w_k[0].shape[0]:
        raise DimensionError(
            f"attention inputs {query_src.shape} / {kv_src.shape} do not match projections "
            f"{params.w_q[0].shape} / {params.w_k[0].shape}")
    blocked = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (query_src.shape[0], kv_src.shape[0]):
            raise DimensionError(f"attention mask {mask.shape} does not match "
                                 f"{query_src.shape[0]} queries × {kv_src.shape[0]} keys")
        blocked = ~mask

    inv_sqrt = 1.0 / math.sqrt(params.key_dim)
    heads, weights = [], []
    for w_q, w_k, w_v in zip(params.w_q, params.w_k, params.w_v):
        q = ops.matmul(query_src, w_q)
        k = ops.matmul(kv_src, w_k)
        v = ops.matmul(kv_src, w_v)
        scores = ops.scale(ops.matmul(q, ops.transpose(k)), inv_sqrt)
        if blocked is not None:
            scores = ops.masked_fill(scores, blocked, MASK_VALUE)
        attn = ops.softmax(scores, axis=-1)
        weights.append(attn)
        heads.append(ops.matmul(attn, v))
    merged = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    return AttentionOutput(ops.matmul(merged, params.w_o), weights)


def causal_mask(length: int) -> np.ndarray:
    """Lower-triangular boolean matrix: entry [i, j] is True iff j <= i."""
    return np.tril(np.ones((length, length), dtype=bool))
