"""
Deterministic train / validation / test splitting.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, TypeVar

import numpy as np

from m3t_lib.core.exceptions import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def validate(self):
        fractions = (self.train, self.val, self.test)
        if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")

    def sizes(self, n: int) -> Tuple[int, int, int]:
        """
        Validation and test sizes are n·fraction rounded half up; train takes
        the remainder. 15,709 records at 60/20/20 give 9,425 / 3,142 / 3,142.
        """
        self.validate()
        n_val = int(math.floor(n * self.val + 0.5))
        n_test = int(math.floor(n * self.test + 0.5))
        if n_val + n_test > n:
            n_test = n - n_val
        return n - n_val - n_test, n_val, n_test


def split_dataset(records: Sequence[T], spec: SplitSpec) -> Tuple[List[T], List[T], List[T]]:
    """Shuffles with `spec.seed` and slices contiguously into train, val and test."""
    n_train, n_val, _ = spec.sizes(len(records))
    order = np.random.default_rng(spec.seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]
    logger.info(f"Split {len(records)} records into {len(train)} / {len(val)} / {len(test)}")
    return train, val, test
