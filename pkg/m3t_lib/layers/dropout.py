"""
Reproducible dropout scheduling.

Each dropout call inside a training step draws its mask from a seed derived
from (global seed, step, call index), so a training run can be replayed
exactly regardless of how many steps ran before in the same process.
"""
import numpy as np

from m3t_lib.tensor import ops
from m3t_lib.tensor.tensor import Tensor


class DropoutScope:
    """
    A callable applying dropout with counter-based seeds.

    The owning model calls `begin_step` before every forward pass; in
    inference mode (`training = False`) the scope is the identity.
    """

    def __init__(self, rate: float, seed: int):
        self.rate = rate
        self.seed = seed
        self.step = 0
        self.training = True
        self._calls = 0

    def begin_step(self, step: int):
        self.step = step
        self._calls = 0

    def next_seed(self) -> int:
        sequence = np.random.SeedSequence([self.seed, self.step, self._calls])
        self._calls += 1
        return int(sequence.generate_state(1)[0])

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        return ops.dropout(x, self.rate, self.next_seed(), training=True)
