"""
Differentiable tensor operations.

Every op validates shapes up front, computes its result with numpy and
records a closure computing the vector-Jacobian product. Broadcasting is
limited to bias-style addition/multiplication along the last axis and
single-element (scalar) operands; every other shape mismatch is a
`DimensionError`.
"""
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from m3t_lib.core.exceptions import ContractError, DimensionError, NumericError, TokenIndexError
from m3t_lib.tensor.tensor import Parameter, Tensor, get_default_dtype, record_op

Axis = Optional[Union[int, Tuple[int, ...]]]


def constant(data, dtype=None) -> Tensor:
    """A tensor that never receives a gradient."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return "bias"
    if b.size == 1 and b.ndim <= 1:
        return "scalar"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, kind: str, shape: Tuple[int, ...]) -> np.ndarray:
    if kind == "same":
        return grad
    if kind == "bias":
        return grad.reshape(-1, shape[0]).sum(axis=0)
    return np.asarray(grad.sum()).reshape(shape)


# --- Linear algebra ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a[m×k] and b[k×n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def _backward(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return record_op("matmul", A @ B, (a, b), _backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permutes axes; with no `axes` reverses them (plain 2-D transpose)."""
    perm = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(perm) != list(range(x.ndim)):
        raise DimensionError(f"transpose: invalid permutation {perm} for shape {x.shape}")
    inverse = tuple(np.argsort(perm))
    return record_op("transpose", np.transpose(x.data, perm), (x,),
                     lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    original = x.shape
    return record_op("reshape", out, (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    rank = tensors[0].ndim
    ax = axis % rank
    for t in tensors[1:]:
        if t.ndim != rank or any(t.shape[i] != tensors[0].shape[i] for i in range(rank) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return record_op("concat", out, tuple(tensors), _backward)


# --- Elementwise ---

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a last-axis bias vector or a scalar."""
    kind = _broadcast_kind("add", a, b)
    b_shape = b.shape

    def _backward(g):
        return g, _reduce_to(g, kind, b_shape)

    return record_op("add", a.data + b.data, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; `b` may be a last-axis scale vector or a scalar."""
    kind = _broadcast_kind("mul", a, b)
    A, B = a.data, b.data

    def _backward(g):
        return g * B, _reduce_to(g * A, kind, B.shape)

    return record_op("mul", A * B, (a, b), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    c = float(factor)
    return record_op("scale", x.data * x.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),))


def row_scale(x: Tensor, weights: Tensor) -> Tensor:
    """Scales every last-axis vector of x[..., C] by the matching entry of weights[...]."""
    if weights.shape != x.shape[:-1]:
        raise DimensionError(f"row_scale: weights {weights.shape} do not match rows of {x.shape}")
    X, W = x.data, weights.data

    def _backward(g):
        return g * W[..., None], (g * X).sum(axis=-1)

    return record_op("row_scale", X * W[..., None], (x, weights), _backward)


def relu(x: Tensor) -> Tensor:
    X = x.data
    return record_op("relu", np.maximum(X, 0), (x,), lambda g: (g * (X > 0),))


def _sigmoid(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    positive = values >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-values[positive]))
    exp_neg = np.exp(values[~positive])
    out[~positive] = exp_neg / (1.0 + exp_neg)
    # float32 rounds logits beyond about ±17 onto 0 or 1; keep the open interval
    one = out.dtype.type(1)
    return np.clip(out, np.finfo(out.dtype).tiny, np.nextafter(one, out.dtype.type(0)))


def sigmoid(x: Tensor) -> Tensor:
    Y = _sigmoid(x.data)
    return record_op("sigmoid", Y, (x,), lambda g: (g * Y * (1 - Y),))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replaces entries where `mask` is True by `value`; those entries get zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_fill: mask {mask.shape} does not match {x.shape}")
    out = np.where(mask, x.dtype.type(value), x.data)
    return record_op("masked_fill", out, (x,), lambda g: (np.where(mask, 0, g),))


def dropout(x: Tensor, rate: float, seed: int, training: bool = True) -> Tensor:
    """
    Inverted dropout with a mask drawn from `seed`.

    Identity when `rate` is 0 or outside training.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    mask = (keep / (1.0 - rate)).astype(x.dtype)
    return record_op("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# --- Reductions ---

def _expand(g: np.ndarray, shape: Tuple[int, ...], axis: Axis) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(x: Tensor, axis: Axis = None) -> Tensor:
    shape = x.shape
    return record_op("sum", np.asarray(x.data.sum(axis=axis)), (x,),
                     lambda g: (_expand(g, shape, axis),))


def reduce_mean(x: Tensor, axis: Axis = None) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.mean(axis=axis))
    count = x.size // max(out.size, 1)
    return record_op("mean", out, (x,),
                     lambda g: (_expand(g, shape, axis) / count,))


# --- Normalisation ---

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilised softmax along `axis`."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    Y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (Y * (g - (g * Y).sum(axis=axis, keepdims=True)),)

    return record_op("softmax", Y, (x,), _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalises the last axis to zero mean / unit variance, then scales and shifts."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last axis of {x.shape}")
    X, G, B = x.data, gamma.data, beta.data
    centered = X - X.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centered * rstd

    def _backward(g):
        dxhat = g * G
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).reshape(-1, n).sum(axis=0), g.reshape(-1, n).sum(axis=0)

    return record_op("layer_norm", xhat * G + B, (x, gamma, beta), _backward)


# --- Lookups and convolutions ---

def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gathers rows of table[V×d] for integer ids of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.max()) if ids.max() >= table.shape[0] else int(ids.min())
        raise TokenIndexError(f"embedding_lookup: id {bad} outside table of {table.shape[0]} rows")
    T = table.data

    def _backward(g):
        grad = np.zeros_like(T)
        np.add.at(grad, ids, g)
        return (grad,)

    return record_op("embedding_lookup", T[ids], (table,), _backward)


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1×1 convolution of x[H×W×Cin] with w[Cin×Cout] plus bias b[Cout]."""
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"pointwise_conv: input {x.shape}, weights {w.shape}, bias {b.shape} do not agree")
    H, W_, Cin = x.shape
    flat = x.data.reshape(H * W_, Cin)
    Wm = w.data
    out = (flat @ Wm + b.data).reshape(H, W_, Wm.shape[1])

    def _backward(g):
        g2 = g.reshape(H * W_, -1)
        return (g2 @ Wm.T).reshape(H, W_, Cin), flat.T @ g2, g2.sum(axis=0)

    return record_op("pointwise_conv", out, (x, w, b), _backward)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Square-kernel convolution of x[H×W×Cin] with w[k×k×Cin×Cout] (im2col).

    Each output element is a single dot product over a fixed patch order, so
    results are reproducible run to run.
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[0] != w.shape[1] or x.shape[2] != w.shape[2] \
            or b.shape != (w.shape[3],):
        raise DimensionError(f"conv2d: input {x.shape}, weights {w.shape}, bias {b.shape} do not agree")
    k, cin, cout = w.shape[0], w.shape[2], w.shape[3]
    H, W_ = x.shape[0], x.shape[1]
    Ho, Wo = conv_output_size(H, k, stride, padding), conv_output_size(W_, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: input {x.shape} too small for kernel {k} with stride {stride}")
    padded = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    windows = windows[::stride, ::stride][:Ho, :Wo]              # Ho, Wo, Cin, k, k
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2)).reshape(Ho * Wo, k * k * cin)
    Wm = w.data.reshape(k * k * cin, cout)
    out = (cols @ Wm + b.data).reshape(Ho, Wo, cout)

    def _backward(g):
        g2 = g.reshape(Ho * Wo, cout)
        dcols = (g2 @ Wm.T).reshape(Ho, Wo, k, k, cin)
        dpadded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                dpadded[i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, i, j, :]
        dx = dpadded[padding:padding + H, padding:padding + W_, :]
        return dx, (cols.T @ g2).reshape(w.shape), g2.sum(axis=0)

    return record_op("conv2d", out, (x, w, b), _backward)


# --- Loss ---

def cross_entropy(logits: Tensor, targets, pad_id: int, reduction: str = "mean") -> Tensor:
    """
    Softmax cross-entropy of logits[T×V] against target ids, skipping `pad_id`.

    With reduction 'mean' the loss is averaged over non-pad positions, with
    'sum' it is summed.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"Unknown reduction '{reduction}'")
    V = logits.shape[1]
    valid = targets != pad_id
    rows = np.nonzero(valid)[0]
    picked = targets[rows]
    if picked.size and (picked.min() < 0 or picked.max() >= V):
        raise TokenIndexError(f"cross_entropy: target id {int(picked.max())} outside {V} classes")
    if rows.size == 0:
        raise ContractError("cross_entropy: every target is padding")

    L = logits.data
    shifted = L - L.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    denom = rows.size if reduction == "mean" else 1
    loss = np.asarray(-log_probs[rows, picked].sum() / denom, dtype=L.dtype)

    def _backward(g):
        grad = np.exp(log_probs)
        grad[rows, picked] -= 1
        grad *= valid[:, None]
        return (grad * (g / denom),)

    return record_op("cross_entropy", loss, (logits,), _backward)


def log_softmax_rows(values: np.ndarray) -> np.ndarray:
    """Plain numpy log-softmax over the last axis (inference helper, not recorded)."""
    shifted = values - values.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def uniform_fan_in(rng: np.random.Generator, shape: Sequence[int], fan_in: int, name: Optional[str] = None):
    """Samples U(-sqrt(1/fan_in), +sqrt(1/fan_in)) as a trainable Parameter."""
    bound = math.sqrt(1.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=tuple(shape)), name=name, dtype=get_default_dtype())
