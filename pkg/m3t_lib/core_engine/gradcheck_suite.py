"""
Finite-difference verification of every op and composite block.

Each case builds a small random instance in double precision and reduces
the output to a scalar with a fixed random projection, so no gradient
cancels by symmetry. Instances whose relu inputs sit closer than
`RELU_MARGIN` to the kink are redrawn: a finite-difference probe crossing
the kink measures a different slope than the one the tape reports.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from m3t_lib.core.exceptions import NumericError
from m3t_lib.decoding.decoder import DecoderParams, decoder_forward
from m3t_lib.fusion.transfusion import TransFusionParams, encoder_block
from m3t_lib.keywords.keyword_encoder import KeywordAttentionParams, keyword_attention
from m3t_lib.layers.attention import AttentionParams, causal_mask, multi_head_attention
from m3t_lib.layers.params import collect_parameters
from m3t_lib.tensor import ops
from m3t_lib.tensor.gradcheck import check_parameters
from m3t_lib.tensor.tensor import Parameter, Tape, Tensor, precision
from m3t_lib.visual.backbone import (BackboneConfig, ConvStageParams, SqueezeExciteParams,
                                     backbone_forward, squeeze_excite)
from m3t_lib.visual.feature_map import FeatureMap
from m3t_lib.visual.lesion_gate import LesionGateParams, contextual_gate

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEP = 1e-3
RELU_MARGIN = 1e-2
MAX_DRAWS = 200
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

ScalarFn = Callable[[], Tensor]
Instance = Tuple[ScalarFn, Dict[str, Tensor]]
Builder = Callable[[np.random.Generator], Instance]


def _param(rng: np.random.Generator, *shape, scale: float = 1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, size=shape))


def _weighted(build: Callable[[], Tensor], rng: np.random.Generator) -> ScalarFn:
    """sum(build() * R) for a fixed random R of the output's shape."""
    weights = ops.constant(rng.normal(size=build().shape))
    return lambda: ops.reduce_sum(ops.mul(build(), weights))


# --- primitive ops ---

def _matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    return _weighted(lambda: ops.matmul(a, b), rng), {"a": a, "b": b}


def _transpose_reshape(rng):
    x = _param(rng, 2, 3, 4)
    return _weighted(lambda: ops.reshape(ops.transpose(x, (2, 0, 1)), (4, 6)), rng), {"x": x}


def _concat(rng):
    a, b = _param(rng, 2, 3), _param(rng, 2, 2)
    return _weighted(lambda: ops.concat([a, b], axis=1), rng), {"a": a, "b": b}


def _add_mul(rng):
    x, y, bias, s = _param(rng, 3, 4), _param(rng, 3, 4), _param(rng, 4), _param(rng, 1)
    build = lambda: ops.mul(ops.add(ops.mul(x, y), bias), s)
    return _weighted(build, rng), {"x": x, "y": y, "bias": bias, "s": s}


def _scale_row_scale(rng):
    x, w = _param(rng, 2, 3, 4), _param(rng, 2, 3)
    return _weighted(lambda: ops.scale(ops.row_scale(x, w), 0.7), rng), {"x": x, "w": w}


def _relu_sigmoid(rng):
    x = _param(rng, 3, 5)
    return _weighted(lambda: ops.add(ops.relu(x), ops.sigmoid(x)), rng), {"x": x}


def _masked_softmax(rng):
    x = _param(rng, 4, 4)
    blocked = ~causal_mask(4)
    return _weighted(lambda: ops.softmax(ops.masked_fill(x, blocked, -1e9), axis=-1), rng), {"x": x}


def _dropout(rng):
    x = _param(rng, 4, 6)
    seed = int(rng.integers(2 ** 31))
    return _weighted(lambda: ops.dropout(x, 0.3, seed, training=True), rng), {"x": x}


def _reductions(rng):
    x = _param(rng, 3, 4)
    build = lambda: ops.concat([ops.reduce_sum(x, axis=0), ops.reduce_mean(x, axis=0)], axis=0)
    return _weighted(build, rng), {"x": x}


def _layer_norm(rng):
    x, g, b = _param(rng, 3, 5), _param(rng, 5), _param(rng, 5)
    return _weighted(lambda: ops.layer_norm(x, g, b), rng), {"x": x, "gamma": g, "beta": b}


def _embedding(rng):
    table = _param(rng, 6, 3)
    ids = np.array([1, 4, 1, 0])
    return _weighted(lambda: ops.embedding_lookup(table, ids), rng), {"table": table}


def _pointwise_conv(rng):
    x, w, b = _param(rng, 3, 3, 2), _param(rng, 2, 4), _param(rng, 4)
    return _weighted(lambda: ops.pointwise_conv(x, w, b), rng), {"x": x, "w": w, "b": b}


def _conv2d(rng):
    x, w, b = _param(rng, 5, 5, 2), _param(rng, 3, 3, 2, 3, scale=0.5), _param(rng, 3)
    return _weighted(lambda: ops.conv2d(x, w, b, stride=2, padding=1), rng), {"x": x, "w": w, "b": b}


def _cross_entropy(rng):
    logits = _param(rng, 5, 6)
    targets = np.array([2, 0, 5, 3, 0])     # id 0 is padding
    return (lambda: ops.cross_entropy(logits, targets, pad_id=0)), {"logits": logits}


# --- composite blocks ---

def _squeeze_excite(rng):
    x = _param(rng, 3, 3, 8)
    p = SqueezeExciteParams.create(rng, 8, 4)
    p.b1.data = rng.normal(size=p.b1.shape)
    tensors = {"x": x, **collect_parameters("se", p)}
    return _weighted(lambda: squeeze_excite(x, p), rng), tensors


def _backbone(rng):
    cfg = BackboneConfig(input_size=4, stage_channels=[3, 4], se_ratio=2, feature_shape=(1, 1, 4))
    image = Parameter(rng.uniform(0.0, 1.0, size=(4, 4, 3)))
    stages, c_in = [], 3
    for c_out in cfg.stage_channels:
        stages.append(ConvStageParams(w=_param(rng, 3, 3, c_in, c_out, scale=0.5), b=_param(rng, c_out),
                                      se=SqueezeExciteParams.create(rng, c_out, cfg.se_ratio)))
        c_in = c_out
    tensors = {"image": image}
    for i, stage in enumerate(stages):
        tensors.update(collect_parameters(f"stage{i}", stage))
    return _weighted(lambda: backbone_forward(image, stages, cfg).values, rng), tensors


def _lesion_gate(rng):
    f = _param(rng, 2, 3, 16)
    p = LesionGateParams.create(rng, 16, 4)
    p.ln_gamma.data = rng.normal(1.0, 0.2, size=p.ln_gamma.shape)
    p.ln_beta.data = rng.normal(0.0, 0.2, size=p.ln_beta.shape)
    tensors = {"f": f, **collect_parameters("gate", p)}
    return _weighted(lambda: contextual_gate(FeatureMap(f), p).features.values, rng), tensors


def _keyword_attention(rng):
    e = _param(rng, 4, 5)
    p = KeywordAttentionParams.create(5)
    p.w_ke.data = p.w_ke.data + rng.normal(0.0, 0.2, size=p.w_ke.shape)
    valid = np.array([True, True, True, False])
    tensors = {"e": e, "w_ke": p.w_ke}
    return _weighted(lambda: keyword_attention(e, p, valid).context, rng), tensors


def _attention(rng):
    q, kv = _param(rng, 3, 4), _param(rng, 3, 6)
    p = AttentionParams.create(rng, 4, 6, 4, 2)
    mask = causal_mask(3)
    tensors = {"q": q, "kv": kv, **collect_parameters("mha", p)}
    return _weighted(lambda: multi_head_attention(q, kv, p, mask).output, rng), tensors


def _transfusion(rng):
    tokens, ke = _param(rng, 4, 8), _param(rng, 3, 5)
    p = TransFusionParams.create(rng, 6, 8, 5, 2, 6)
    tensors = {"tokens": tokens, "ke_att": ke, **collect_parameters("fusion", p)}
    tensors.pop("fusion.w_in")      # not on this path
    return _weighted(lambda: encoder_block(tokens, ke, p).f_prime, rng), tensors


def _decoder(rng):
    f_prime = _param(rng, 3, 8)
    p = DecoderParams.create(rng, vocab_size=7, model_dim=8, heads=2, ff_dim=6, max_positions=6)
    ids, targets = [2, 5, 6, 4], np.array([5, 6, 4, 3])
    tensors = {"f_prime": f_prime, **collect_parameters("decoder", p)}
    return (lambda: ops.cross_entropy(decoder_forward(ids, f_prime, p).logits, targets, pad_id=0)), tensors


OP_CASES: Dict[str, Builder] = {
    "matmul": _matmul,
    "transpose_reshape": _transpose_reshape,
    "concat": _concat,
    "add_mul": _add_mul,
    "scale_row_scale": _scale_row_scale,
    "relu_sigmoid": _relu_sigmoid,
    "masked_softmax": _masked_softmax,
    "dropout": _dropout,
    "reductions": _reductions,
    "layer_norm": _layer_norm,
    "embedding_lookup": _embedding,
    "pointwise_conv": _pointwise_conv,
    "conv2d": _conv2d,
    "cross_entropy": _cross_entropy,
}

BLOCK_CASES: Dict[str, Builder] = {
    "squeeze_excite": _squeeze_excite,
    "backbone": _backbone,
    "lesion_gate": _lesion_gate,
    "keyword_attention": _keyword_attention,
    "multi_head_attention": _attention,
    "transfusion": _transfusion,
    "decoder": _decoder,
}

ALL_CASES: Dict[str, Builder] = {**OP_CASES, **BLOCK_CASES}


def min_relu_distance(f: ScalarFn) -> float:
    """Smallest |input| over every relu evaluated by f(); inf if f has no relu."""
    with Tape() as tape:
        f()
    distances = [np.abs(node.inputs[0].data).min() for node in tape.records if node.op == "relu"]
    return float(min(distances)) if distances else float("inf")


def draw_instance(builder: Builder, rng: np.random.Generator, margin: float = RELU_MARGIN) -> Tuple[Instance, int]:
    """Draws instances until every relu input is at least `margin` from zero."""
    for attempt in range(1, MAX_DRAWS + 1):
        f, tensors = builder(rng)
        if min_relu_distance(f) >= margin:
            return (f, tensors), attempt
    raise NumericError(f"no instance without near-kink relu inputs in {MAX_DRAWS} draws")


@dataclass
class GradcheckResult:
    case: str
    seed: int
    errors: Dict[str, float]
    draws: int
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get) if self.errors else ""

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def check_case(name: str, seed: int, tolerance: float = TOLERANCE, step: float = STEP) -> GradcheckResult:
    builder = ALL_CASES[name]
    with precision("float64"):
        rng = np.random.default_rng(seed)
        (f, tensors), draws = draw_instance(builder, rng)
        errors = check_parameters(f, tensors, step)
    result = GradcheckResult(name, seed, errors, draws, tolerance)
    level = logging.INFO if result.passed else logging.ERROR
    logger.log(level, f"gradcheck {name} seed {seed}: max relative error {result.max_error:.3e} "
                      f"({result.worst}){'' if result.passed else ' FAILED'}")
    return result


def run_gradcheck_suite(seeds: Iterable[int] = DEFAULT_SEEDS, cases: Optional[Sequence[str]] = None,
                        tolerance: float = TOLERANCE) -> List[GradcheckResult]:
    names = list(cases) if cases else list(ALL_CASES)
    unknown = [n for n in names if n not in ALL_CASES]
    if unknown:
        raise KeyError(f"Unknown gradcheck cases {unknown}; known: {list(ALL_CASES)}")
    started = time.perf_counter()
    results = [check_case(name, seed, tolerance) for seed in seeds for name in names]
    failed = sum(not r.passed for r in results)
    logger.info(f"gradcheck: {len(results) - failed}/{len(results)} checks passed "
                f"in {time.perf_counter() - started:.1f}s")
    return results


def results_frame(results: Sequence[GradcheckResult]) -> pd.DataFrame:
    """One row per case: worst error over the seeds and the verdict."""
    frame = pd.DataFrame([{"case": r.case, "seed": r.seed, "max_error": r.max_error,
                           "worst_tensor": r.worst, "passed": r.passed} for r in results])
    grouped = frame.groupby("case", sort=False).agg(seeds=("seed", "count"), max_error=("max_error", "max"),
                                                     passed=("passed", "all"))
    return grouped.reset_index()
