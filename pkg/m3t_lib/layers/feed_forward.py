"""
Position-wise feed-forward network H = W_out · relu(W_in · x).
"""
from dataclasses import dataclass

import numpy as np

from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor


@dataclass
class FeedForwardParams:
    w_in: Parameter    # d_model × d_ff
    w_out: Parameter   # d_ff × d_model

    @classmethod
    def create(cls, rng: np.random.Generator, model_dim: int, hidden_dim: int) -> "FeedForwardParams":
        return cls(w_in=ops.uniform_fan_in(rng, (model_dim, hidden_dim), model_dim),
                   w_out=ops.uniform_fan_in(rng, (hidden_dim, model_dim), hidden_dim))


def feed_forward(x: Tensor, params: FeedForwardParams) -> Tensor:
    return ops.matmul(ops.relu(ops.matmul(x, params.w_in)), params.w_out)
