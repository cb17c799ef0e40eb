"""
Small trainable SE-conv backbone.

A stack of 3×3 stride-2 convolutions, each followed by relu and a
squeeze-and-excitation block, turning a square RGB image into a FeatureMap.
With `mode: precomputed` the backbone is bypassed and features are read
from M3TF files instead.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from m3t_lib.core.exceptions import ConfigError, DimensionError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor
from m3t_lib.visual.feature_map import FeatureMap

logger = logging.getLogger(__name__)

KERNEL = 3
STRIDE = 2
PADDING = 1


@dataclass
class BackboneConfig:
    """
    Shape and mode of the visual backbone.

    Attributes:
        mode: 'conv' to run the SE-conv stack, 'precomputed' to ingest features.
        input_size: Side length of the square input image.
        stage_channels: Output channels of every stride-2 stage.
        se_ratio: Channel reduction ratio inside each SE block.
        feature_shape: Expected (H, W, C) of the produced FeatureMap.
    """
    mode: str = "conv"
    input_size: int = 64
    stage_channels: List[int] = field(default_factory=lambda: [8, 16, 32, 64])
    se_ratio: int = 4
    feature_shape: Tuple[int, int, int] = (4, 4, 64)

    def stage_sizes(self) -> List[int]:
        """Spatial side length after each stage."""
        sizes, size = [], self.input_size
        for _ in self.stage_channels:
            size = ops.conv_output_size(size, KERNEL, STRIDE, PADDING)
            sizes.append(size)
        return sizes

    def validate(self):
        if self.mode not in ("conv", "precomputed"):
            raise ConfigError(f"Unknown backbone mode '{self.mode}'")
        if self.se_ratio < 1:
            raise ConfigError(f"SE reduction ratio must be >= 1, got {self.se_ratio}")
        if self.mode == "precomputed":
            return
        if not self.stage_channels:
            raise ConfigError("The conv backbone needs at least one stage")
        side = self.stage_sizes()[-1]
        produced = (side, side, self.stage_channels[-1])
        if produced != tuple(self.feature_shape):
            raise ConfigError(
                f"Backbone stages turn {self.input_size}×{self.input_size}×3 into {produced}, "
                f"but the feature shape is configured as {tuple(self.feature_shape)}")


@dataclass
class SqueezeExciteParams:
    w1: Parameter   # C × C/r
    b1: Parameter
    w2: Parameter   # C/r × C
    b2: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, ratio: int) -> "SqueezeExciteParams":
        hidden = max(1, channels // ratio)
        return cls(w1=ops.uniform_fan_in(rng, (channels, hidden), channels),
                   b1=Parameter(np.zeros(hidden)),
                   w2=ops.uniform_fan_in(rng, (hidden, channels), hidden),
                   b2=Parameter(np.zeros(channels)))


@dataclass
class ConvStageParams:
    w: Parameter    # 3 × 3 × C_in × C_out
    b: Parameter
    se: SqueezeExciteParams


def squeeze_excite(x: Tensor, params: SqueezeExciteParams) -> Tensor:
    """Rescales the channels of x[H×W×C] by sigmoid(w2·relu(w1·mean(x) + b1) + b2)."""
    H, W, C = x.shape
    if params.w1.shape[0] != C:
        raise DimensionError(f"squeeze_excite: input {x.shape} does not match weights {params.w1.shape}")
    pooled = ops.reduce_mean(ops.reshape(x, (H * W, C)), axis=0)
    hidden = ops.relu(ops.add(ops.matmul(ops.reshape(pooled, (1, C)), params.w1), params.b1))
    gates = ops.sigmoid(ops.add(ops.matmul(hidden, params.w2), params.b2))
    return ops.mul(x, ops.reshape(gates, (C,)))


def backbone_forward(image: Tensor, stages: List[ConvStageParams], cfg: BackboneConfig) -> FeatureMap:
    """
    Runs the SE-conv stack on an image.

    Args:
        image: Pixel values [input_size × input_size × 3].
        stages: Per-stage weights.
        cfg: The backbone configuration.

    Returns:
        The FeatureMap of shape cfg.feature_shape.
    """
    expected = (cfg.input_size, cfg.input_size, 3)
    if image.shape != expected:
        raise DimensionError(f"backbone expects an image of shape {expected}, got {image.shape}")
    x = image
    for stage in stages:
        x = ops.relu(ops.conv2d(x, stage.w, stage.b, stride=STRIDE, padding=PADDING))
        x = squeeze_excite(x, stage.se)
    return FeatureMap(x)


class SEConvBackbone(Trainable):
    """The trainable backbone; owns one ConvStageParams per stage."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.stages: List[ConvStageParams] = []
        if cfg.mode == "conv":
            c_in = 3
            for c_out in cfg.stage_channels:
                fan_in = KERNEL * KERNEL * c_in
                self.stages.append(ConvStageParams(
                    w=ops.uniform_fan_in(rng, (KERNEL, KERNEL, c_in, c_out), fan_in),
                    b=Parameter(np.zeros(c_out)),
                    se=SqueezeExciteParams.create(rng, c_out, cfg.se_ratio)))
                c_in = c_out
            logger.debug(f"SE-conv backbone with stage sizes {cfg.stage_sizes()} and channels {cfg.stage_channels}")

    def named_parameters(self) -> Parameters:
        found: Parameters = {}
        for i, stage in enumerate(self.stages):
            found.update(collect_parameters(f"backbone.stage{i}", stage))
        return found

    def __call__(self, image: Tensor) -> FeatureMap:
        if self.cfg.mode != "conv":
            raise ConfigError("The backbone is in precomputed mode; load features instead of images")
        return backbone_forward(image, self.stages, self.cfg)
