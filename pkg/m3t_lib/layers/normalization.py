"""
Layer-normalisation parameter pair.
"""
from dataclasses import dataclass

import numpy as np

from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor

LAYER_NORM_EPS = 1e-5


@dataclass
class LayerNormParams:
    gamma: Parameter
    beta: Parameter

    @classmethod
    def create(cls, dim: int) -> "LayerNormParams":
        return cls(gamma=Parameter(np.ones(dim)), beta=Parameter(np.zeros(dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, LAYER_NORM_EPS)
