"""
Core Interfaces (Abstract Base Classes)

This module defines the abstract base classes shared by the M3T model blocks.
They keep parameter handling and decoding pluggable: every trainable block
exposes its parameters by name in the same way, and decoding strategies
(greedy, beam) can be swapped without touching the model.
"""
from abc import ABC, abstractmethod
from typing import Dict, List, Mapping, Sequence, TYPE_CHECKING

import numpy as np

from m3t_lib.core.exceptions import ContractError, DimensionError

if TYPE_CHECKING:
    from m3t_lib.tensor.tensor import Tensor

# Type alias for named parameter collections
Parameters = Dict[str, "Tensor"]
TokenIds = Sequence[int]


class Trainable(ABC):
    """
    An interface for any model block that owns trainable tensors.

    Blocks report their parameters under dotted names (e.g. 'gate.w_context')
    so that the optimizer, the checkpoint writer and the gradient checker can
    address them uniformly.
    """

    training: bool = True

    @abstractmethod
    def named_parameters(self) -> Parameters:
        """
        Get the trainable tensors of the block.

        Returns:
            An ordered mapping from dotted parameter name to tensor.
        """
        pass

    def parameters(self) -> List["Tensor"]:
        return list(self.named_parameters().values())

    def state_parameters(self) -> Parameters:
        """
        Tensors that make up the persisted state.

        Defaults to the trainable set; blocks with switchable sub-blocks
        report every tensor they own here.
        """
        return self.named_parameters()

    def train(self):
        """Switches the block to training mode (dropout active)."""
        self.training = True
        return self

    def eval(self):
        """Switches the block to inference mode (dropout is the identity)."""
        self.training = False
        return self

    def load_parameters(self, values: Mapping[str, np.ndarray], strict: bool = True):
        """
        Overwrites parameter values in place.

        Args:
            values: Arrays keyed by the names reported by `state_parameters`.
            strict: When True, every parameter of the block must be present.
        """
        params = self.state_parameters()
        if strict:
            missing = sorted(set(params) - set(values))
            if missing:
                raise ContractError(f"Missing values for parameters: {missing}")
        for name, tensor in params.items():
            if name not in values:
                continue
            array = np.asarray(values[name])
            if array.shape != tensor.shape:
                raise DimensionError(
                    f"Parameter '{name}' has shape {tensor.shape}, got {array.shape}")
            tensor.data = array.astype(tensor.dtype, copy=True)
            tensor.grad = None


class DecodingStrategy(ABC):
    """
    An interface for a sequence decoding algorithm.

    This separates the search procedure from the model, so greedy and beam
    search can be exchanged by configuration.
    """

    @abstractmethod
    def decode(self, model, image, keyword_ids: TokenIds, max_len: int) -> List[int]:
        """
        Generate a description for one input.

        Args:
            model: The M3T model to query.
            image: A raw image array or a precomputed FeatureMap.
            keyword_ids: Encoded keyword sequence.
            max_len: Maximum number of generated tokens (EOS excluded).

        Returns:
            The generated token ids without BOS/EOS.
        """
        pass
