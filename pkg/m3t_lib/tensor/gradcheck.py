"""
Finite-difference gradient verification.

Central differences (four-point stencil by default) are compared element by
element with the gradients the tape produces. Run these checks inside
`precision("float64")`; 32-bit tolerances are far looser than the 1e-4
target.
"""
from typing import Callable, Dict, Mapping

import numpy as np

from m3t_lib.core.exceptions import ContractError
from m3t_lib.tensor.tensor import Tape, Tensor, backward, no_grad

ScalarFn = Callable[[], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(f: ScalarFn, x: Tensor, step: float = 1e-3, order: int = 4) -> np.ndarray:
    """
    Central-difference gradient of the scalar f() w.r.t. the values of x.

    order=2 is the two-point stencil (f(x+h) - f(x-h)) / 2h; order=4 the
    four-point stencil (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h, whose
    truncation error is O(h^4).
    """
    if order not in (2, 4):
        raise ContractError(f"Unsupported stencil order {order}")
    grad = np.zeros(x.shape, dtype=np.float64)
    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)

    def _at(i: int, original, offset: float) -> float:
        flat[i] = original + offset
        return f().item()

    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            if order == 2:
                value = (_at(i, original, step) - _at(i, original, -step)) / (2.0 * step)
            else:
                value = (_at(i, original, -2 * step) - 8.0 * _at(i, original, -step)
                         + 8.0 * _at(i, original, step) - _at(i, original, 2 * step)) / (12.0 * step)
            flat[i] = original
            grad.reshape(-1)[i] = value
    return grad


def analytic_gradients(f: ScalarFn, tensors: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """Gradients of f() for the given tensors, computed on a fresh tape."""
    for t in tensors.values():
        if not t.requires_grad:
            raise ContractError(f"Tensor '{t.name}' does not require a gradient")
        t.grad = None
    with Tape():
        out = f()
        backward(out)
    return {name: (t.grad if t.grad is not None else np.zeros(t.shape)) for name, t in tensors.items()}


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3) -> float:
    """
    Compares autograd and central-difference gradients of f at x.

    Args:
        f: Scalar-valued tensor function.
        x: The point of evaluation; must require a gradient.
        step: Finite-difference step (> 0).

    Returns:
        The maximum relative error with an absolute floor of 1e-8.
    """
    if step <= 0:
        raise ContractError(f"Finite-difference step must be positive, got {step}")
    analytic = analytic_gradients(lambda: f(x), {"x": x})["x"]
    numeric = numeric_gradient(lambda: f(x), x, step)
    return relative_error(analytic, numeric)


def check_parameters(f: ScalarFn, tensors: Mapping[str, Tensor], step: float = 1e-3) -> Dict[str, float]:
    """Runs the finite-difference comparison for every named tensor feeding f()."""
    analytic = analytic_gradients(f, tensors)
    return {name: relative_error(analytic[name], numeric_gradient(f, t, step))
            for name, t in tensors.items()}
