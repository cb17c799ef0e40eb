"""
Lesion Contextual Gate.

Three steps turn backbone features F into attention-weighted features F_att:

1. Global attention pooling: one score per spatial position, softmax over
   all positions, weighted sum of the position vectors (F_gap).
2. Channel context: a bottleneck w2·LN(relu(w1·F_gap)) broadcast-added to
   every position (F_c).
3. Spatial gate: alpha_j = sigmoid(w_psi·relu(w_x f_j + w_g f_c,j + b_xg) + b_psi)
   scales each position vector of F; alpha is kept for heatmap export.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.core.interfaces import Parameters, Trainable
from m3t_lib.layers.normalization import LAYER_NORM_EPS
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Parameter, Tensor
from m3t_lib.visual.feature_map import FeatureMap

logger = logging.getLogger(__name__)


@dataclass
class LesionGateParams:
    w_context: Parameter   # C × 1
    w1: Parameter          # C × C/r
    w2: Parameter          # C/r × C
    ln_gamma: Parameter    # C/r
    ln_beta: Parameter     # C/r
    w_x: Parameter         # C × C_int
    w_g: Parameter         # C × C_int
    b_xg: Parameter        # C_int
    w_psi: Parameter       # C_int × 1
    b_psi: Parameter       # (1,)

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, reduction: int = 4) -> "LesionGateParams":
        if reduction < 1:
            raise DimensionError(f"bottleneck ratio must be >= 1, got {reduction}")
        hidden = max(1, channels // reduction)
        inter = max(1, channels // 2)
        return cls(
            w_context=ops.uniform_fan_in(rng, (channels, 1), channels),
            w1=ops.uniform_fan_in(rng, (channels, hidden), channels),
            w2=ops.uniform_fan_in(rng, (hidden, channels), hidden),
            ln_gamma=Parameter(np.ones(hidden)),
            ln_beta=Parameter(np.zeros(hidden)),
            w_x=ops.uniform_fan_in(rng, (channels, inter), channels),
            w_g=ops.uniform_fan_in(rng, (channels, inter), channels),
            b_xg=Parameter(np.zeros(inter)),
            w_psi=ops.uniform_fan_in(rng, (inter, 1), inter),
            b_psi=Parameter(np.zeros(1)),
        )

    @property
    def channels(self) -> int:
        return self.w_context.shape[0]


class GateOutput(NamedTuple):
    features: FeatureMap   # F_att
    alpha: Tensor          # H × W gate coefficients


def _check_channels(f: FeatureMap, p: LesionGateParams):
    if f.channels != p.channels:
        raise DimensionError(f"feature map {f.shape} does not match gate channels {p.channels}")


def _flatten(f: FeatureMap) -> Tensor:
    return ops.reshape(f.values, (f.positions, f.channels))


def pooling_weights(f: FeatureMap, p: LesionGateParams) -> Tensor:
    """Softmax over all H·W positions of the scores w_context·f_j, shape [1 × H·W]."""
    _check_channels(f, p)
    scores = ops.reshape(ops.matmul(_flatten(f), p.w_context), (1, f.positions))
    return ops.softmax(scores, axis=-1)


def global_attention_pool(f: FeatureMap, p: LesionGateParams) -> Tensor:
    """F_gap = sum_j a_j · f_j with a = softmax of the per-position scores."""
    weights = pooling_weights(f, p)
    return ops.reshape(ops.matmul(weights, _flatten(f)), (f.channels,))


def channel_context(f: FeatureMap, f_gap: Tensor, p: LesionGateParams) -> FeatureMap:
    """F_c = f ⊕ w2·LN(relu(w1·F_gap)), the bottleneck output added at every position."""
    _check_channels(f, p)
    if f_gap.shape != (f.channels,):
        raise DimensionError(f"pooled vector {f_gap.shape} does not match feature map {f.shape}")
    hidden = ops.relu(ops.matmul(ops.reshape(f_gap, (1, f.channels)), p.w1))
    normed = ops.layer_norm(hidden, p.ln_gamma, p.ln_beta, LAYER_NORM_EPS)
    context = ops.reshape(ops.matmul(normed, p.w2), (f.channels,))
    return FeatureMap(ops.add(f.values, context))


def lesion_gate(f: FeatureMap, f_c: FeatureMap, p: LesionGateParams) -> GateOutput:
    """Scales every position of f by its gate coefficient alpha_j in (0, 1)."""
    _check_channels(f, p)
    if f_c.shape != f.shape:
        raise DimensionError(f"context map {f_c.shape} does not match feature map {f.shape}")
    combined = ops.add(ops.add(ops.matmul(_flatten(f), p.w_x), ops.matmul(_flatten(f_c), p.w_g)), p.b_xg)
    logits = ops.add(ops.matmul(ops.relu(combined), p.w_psi), p.b_psi)
    alpha = ops.reshape(ops.sigmoid(logits), (f.height, f.width))
    return GateOutput(FeatureMap(ops.row_scale(f.values, alpha)), alpha)


def contextual_gate(f: FeatureMap, p: LesionGateParams) -> GateOutput:
    """All three steps composed."""
    f_gap = global_attention_pool(f, p)
    return lesion_gate(f, channel_context(f, f_gap, p), p)


class LesionContextualGate(Trainable):
    """
    Trainable wrapper around the gate parameters.

    The gate map of the most recent call is kept in `last_alpha` so the
    generate command can export it as a heatmap.
    """

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        self.params = LesionGateParams.create(rng, channels, reduction)
        self.last_alpha: Optional[np.ndarray] = None

    def named_parameters(self) -> Parameters:
        return collect_parameters("gate", self.params)

    def __call__(self, f: FeatureMap) -> GateOutput:
        out = contextual_gate(f, self.params)
        self.last_alpha = out.alpha.numpy()
        return out
