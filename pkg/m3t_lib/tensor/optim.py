"""
Adam optimizer operating on named parameter sets.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping

import numpy as np

from m3t_lib.core.exceptions import ContractError, DimensionError
from m3t_lib.tensor.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Per-parameter moment buffers and hyperparameters of an Adam optimizer.

    Buffers are keyed by parameter name and created lazily on the first
    update, with the parameter's exact shape.
    """
    lr: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> Dict[str, Any]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step": self.step}


def adam_step(params: Mapping[str, Tensor], state: AdamState):
    """
    Applies one bias-corrected Adam update and clears the gradients.

    Args:
        params: Trainable tensors keyed by name; all must carry a gradient.
        state: The optimizer state, updated in place.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"Parameters without gradient: {missing}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    for name, p in params.items():
        grad = p.grad
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        v = state.second_moment[name]
        if m.shape != p.shape:
            raise DimensionError(f"Moment buffer for '{name}' has shape {m.shape}, parameter has {p.shape}")

        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
        p.grad = None

    logger.debug(f"Adam step {t} applied to {len(params)} parameters.")
