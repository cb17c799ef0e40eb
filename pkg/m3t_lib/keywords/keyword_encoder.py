"""
Keyword encoder: learned embeddings refined by bilinear self-attention.

scores = (E · w_ke) · Eᵀ, A = softmax over targets, KE_att = A · E. With
w_ke at its identity initialisation the scores are the plain pairwise dot
products of the embedding rows. No positional information is added, so the
encoder is permutation-equivariant.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.layers.attention import MASK_VALUE
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass
class KeywordAttentionParams:
    w_ke: Parameter   # d_emb × d_emb

    @classmethod
    def create(cls, dim: int) -> "KeywordAttentionParams":
        return cls(w_ke=Parameter(np.eye(dim)))


class KeywordAttentionOutput(NamedTuple):
    context: Tensor   # n × d_emb
    weights: Tensor   # n × n, rows sum to 1


def embed_keywords(ids: Sequence[int], table: Tensor) -> Tensor:
    """Row i is table[ids[i]]; raises TokenIndexError for ids outside the table."""
    return ops.embedding_lookup(table, np.asarray(ids, dtype=np.int64))


def align_scores(e: Tensor) -> Tensor:
    """Pairwise dot products of the embedding rows, [n × n]."""
    if e.ndim != 2 or e.shape[0] < 1:
        raise DimensionError(f"align_scores expects a non-empty n×d matrix, got {e.shape}")
    return ops.matmul(e, ops.transpose(e))


def keyword_attention(e: Tensor, p: KeywordAttentionParams,
                      valid: Optional[np.ndarray] = None) -> KeywordAttentionOutput:
    """
    Context-aware keyword embeddings.

    Args:
        e: Keyword embeddings [n × d_emb].
        p: The bilinear form.
        valid: Optional boolean [n]; False marks padding keys that receive no
            attention mass.
    """
    if e.ndim != 2 or e.shape[1] != p.w_ke.shape[0]:
        raise DimensionError(f"keyword embeddings {e.shape} do not match w_ke {p.w_ke.shape}")
    scores = ops.matmul(ops.matmul(e, p.w_ke), ops.transpose(e))
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (e.shape[0],):
            raise DimensionError(f"keyword mask {valid.shape} does not match {e.shape[0]} keywords")
        scores = ops.masked_fill(scores, np.broadcast_to(~valid, scores.shape), MASK_VALUE)
    weights = ops.softmax(scores, axis=-1)
    return KeywordAttentionOutput(ops.matmul(weights, e), weights)


class KeywordEncoder(Trainable):
    """Owns the keyword embedding table and the attention form."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, use_attention: bool = True):
        self.table = ops.uniform_fan_in(rng, (vocab_size, dim), dim)
        self.attention = KeywordAttentionParams.create(dim)
        self.use_attention = use_attention

    def named_parameters(self) -> Parameters:
        self.table.name = "keywords.table"
        found: Parameters = {"keywords.table": self.table}
        if self.use_attention:
            found.update(collect_parameters("keywords", self.attention))
        return found

    def __call__(self, ids: Sequence[int]) -> Tensor:
        e = embed_keywords(ids, self.table)
        if not self.use_attention:
            return e
        return keyword_attention(e, self.attention).context
