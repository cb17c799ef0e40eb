"""
Dense tensors with tape-based reverse-mode automatic differentiation.

A `Tensor` wraps a row-major numpy array. Operations in `m3t_lib.tensor.ops`
record themselves on the active `Tape` whenever one of their inputs requires
a gradient; `backward` then walks the tape in reverse recording order, which
is a valid topological order because every op is recorded after its inputs
exist.
"""
import contextlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from m3t_lib.core.exceptions import ContractError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_local = threading.local()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(name: str):
    """Sets the dtype used for newly created tensors ('float32' or 'float64')."""
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"Unsupported dtype '{name}', expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """
    Temporarily switches the default dtype.

    Gradient checking builds its parameters and inputs inside
    `precision("float64")` so the whole tape runs in double precision.
    """
    global _default_dtype
    previous = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = previous


class Tensor:
    """
    A dense n-dimensional value with an optional gradient.

    Attributes:
        data: The row-major numpy array holding the values.
        grad: Gradient buffer of identical shape, populated by `backward`.
        requires_grad: Whether operations on this tensor are recorded.
        name: Optional label used in error messages and checkpoints.
        node: The tape record that produced this tensor, None for leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "node")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None, dtype=None):
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node: Optional["Node"] = None

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Wraps an op result without copying or casting it."""
        out = cls.__new__(cls)
        out.data = array
        out.grad = None
        out.requires_grad = False
        out.name = None
        out.node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data: ArrayLike, name: Optional[str] = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


@dataclass
class Node:
    """One recorded operation: its output, inputs and vector-Jacobian product."""
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn
    tape: "Tape"


@dataclass
class Tape:
    """
    An ordered record of differentiable operations for one training step.

    Use as a context manager; only one tape is active per thread at a time.
    """
    records: List[Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        if any(isinstance(t, Tape) for t in stack):
            raise ContractError("A tape is already active in this thread.")
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Node:
        if self.consumed:
            raise ContractError("Cannot record on a tape that was already consumed by backward().")
        node = Node(op, output, inputs, backward_fn, self)
        self.records.append(node)
        return node

    def __len__(self):
        return len(self.records)


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    """Returns the tape ops should record on, or None in inference mode."""
    stack = _tape_stack()
    if not stack:
        return None
    top = stack[-1]
    return top if isinstance(top, Tape) else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspends recording, even inside an active tape (inference mode)."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def record_op(op: str, out_data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wraps an op result and records it when any input requires a gradient."""
    out = Tensor.wrap(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = tape.record(op, out, inputs, backward_fn)
    return out


def backward(loss: Tensor):
    """
    Back-propagates from a scalar loss through the active tape.

    Gradients are accumulated into `.grad` of every leaf tensor that requires
    a gradient; the tape is consumed afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if tape is None or loss.node is None or loss.node.tape is not tape:
        raise ContractError("The loss is not on the active tape.")
    if tape.consumed:
        raise ContractError("The active tape was already consumed.")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.records):
        grad_out = pending.pop(id(node.output), None)
        if grad_out is None:
            continue
        grads_in = node.backward(grad_out)
        for tensor, grad_in in zip(node.inputs, grads_in):
            if grad_in is None or not tensor.requires_grad:
                continue
            if tensor.node is None:
                if tensor.grad is None:
                    tensor.grad = np.array(grad_in, dtype=tensor.dtype)
                else:
                    tensor.grad = tensor.grad + grad_in
            else:
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad_in
                else:
                    pending[key] = grad_in
    logger.debug(f"Backward pass consumed a tape of {len(tape.records)} records.")
    tape.records.clear()
    tape.consumed = True
