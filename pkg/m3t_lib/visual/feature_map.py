"""
Spatial feature blocks exchanged between the backbone, the lesion gate and
the fusion encoder.
"""
from dataclasses import dataclass
from typing import Tuple

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.tensor.tensor import Tensor


@dataclass
class FeatureMap:
    """An H×W×C block of visual features."""
    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DimensionError(f"FeatureMap needs positive H×W×C extents, got {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    @property
    def positions(self) -> int:
        return self.height * self.width
