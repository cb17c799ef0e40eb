"""
Padded mini-batches and a one-ahead prefetcher.
"""
import logging
import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from m3t_lib.core.exceptions import CorpusError
from m3t_lib.data_processing.corpus import EncodedExample
from m3t_lib.data_processing.vocabulary import BOS_ID, EOS_ID, PAD_ID

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """
    Teacher-forced batch.

    inputs are BOS + description and targets description + EOS, both padded
    with `pad_id` to the longest sequence of the batch; masks are True on
    real tokens.
    """
    examples: List[EncodedExample]
    keyword_ids: np.ndarray     # B × K
    keyword_mask: np.ndarray    # B × K
    inputs: np.ndarray          # B × T
    targets: np.ndarray         # B × T
    target_mask: np.ndarray     # B × T

    def __len__(self) -> int:
        return len(self.examples)

    def keywords(self, i: int) -> np.ndarray:
        return self.keyword_ids[i][self.keyword_mask[i]]


def _pad(rows: Sequence[np.ndarray], pad_id: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def make_batch(examples: Sequence[EncodedExample], pad_id: int = PAD_ID) -> Batch:
    inputs = [np.concatenate([[BOS_ID], ex.description_ids]) for ex in examples]
    targets = [np.concatenate([ex.description_ids, [EOS_ID]]) for ex in examples]
    keywords = _pad([ex.keyword_ids for ex in examples], pad_id)
    keyword_lengths = np.array([len(ex.keyword_ids) for ex in examples])
    target_lengths = np.array([len(t) for t in targets])
    return Batch(
        examples=list(examples),
        keyword_ids=keywords,
        keyword_mask=np.arange(keywords.shape[1])[None, :] < keyword_lengths[:, None],
        inputs=_pad(inputs, pad_id),
        targets=_pad(targets, pad_id),
        target_mask=np.arange(max(target_lengths))[None, :] < target_lengths[:, None],
    )


def batch_iterator(split: Sequence[EncodedExample], batch_size: int, pad_id: int = PAD_ID,
                   seed: int = 0, epoch: int = 0, shuffle: bool = True) -> Iterator[Batch]:
    """
    Yields padded batches of one epoch.

    The order is a permutation drawn from (seed, epoch), so every epoch is
    shuffled differently but reproducibly.
    """
    if not split:
        raise CorpusError("cannot batch an empty split")
    if batch_size < 1:
        raise CorpusError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(split))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(split))
    for start in range(0, len(split), batch_size):
        yield make_batch([split[i] for i in order[start:start + batch_size]], pad_id)


_DONE = object()


class BatchPrefetcher:
    """
    Prepares batches on a background thread, one batch ahead.

    Batches are handed over through a bounded queue, so the consumer sees
    them in the producer's order. An exception raised while producing is
    re-raised in the consumer.
    """

    def __init__(self, batches: Iterable[Batch], depth: int = 1):
        self._source = iter(batches)
        self._queue: "queue.Queue" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, daemon=True)
        self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        try:
            for batch in self._source:
                if not self._put(batch):
                    return
            self._put(_DONE)
        except Exception as e:
            logger.error(f"Batch producer failed: {e}")
            self._put(e)

    def __iter__(self) -> Iterator[Batch]:
        while True:
            item = self._queue.get()
            if item is _DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item

    def close(self):
        self._stop.set()
        try:
            while True:
                self._queue.get_nowait()
        except queue.Empty:
            pass
        self._thread.join(timeout=1.0)
