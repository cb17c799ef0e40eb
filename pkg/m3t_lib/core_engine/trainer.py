"""
Teacher-forced training with validation and early stopping.

Every example of a batch builds its own graph on the shared tape; their
logits are concatenated and scored with one cross-entropy, so the batch loss
is the mean over all non-pad target tokens of the batch.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from m3t_lib.core.exceptions import CorpusError
from m3t_lib.core_engine.model import M3TModel, VisualInput
from m3t_lib.data_processing.batching import Batch, BatchPrefetcher, batch_iterator, make_batch
from m3t_lib.data_processing.corpus import EncodedExample
from m3t_lib.data_processing.vocabulary import PAD_ID
from m3t_lib.tensor import ops
from m3t_lib.tensor.optim import AdamState, adam_step
from m3t_lib.tensor.tensor import Tape, Tensor, backward, no_grad

logger = logging.getLogger(__name__)

VisualLoader = Callable[[str], VisualInput]
LOG_COLUMNS = ["step", "epoch", "split", "loss"]


def batch_loss(model: M3TModel, batch: Batch, visual: VisualLoader, reduction: str = "mean") -> Tensor:
    """Cross-entropy of a teacher-forced batch; padding never enters the decoder."""
    logits, targets = [], []
    for i, example in enumerate(batch.examples):
        length = int(batch.target_mask[i].sum())
        logits.append(model.forward(visual(example.image), batch.keywords(i), batch.inputs[i][:length]))
        targets.append(batch.targets[i][:length])
    stacked = logits[0] if len(logits) == 1 else ops.concat(logits, axis=0)
    return ops.cross_entropy(stacked, np.concatenate(targets), PAD_ID, reduction=reduction)


def train_step(batch: Batch, model: M3TModel, adam: AdamState, visual: VisualLoader,
               step: Optional[int] = None, reduction: str = "mean") -> float:
    """
    One forward / backward / Adam update.

    Args:
        batch: A padded batch.
        model: The model; switched to training mode.
        adam: Optimizer state, updated in place.
        visual: Maps an example's image path to its image or features.
        step: Index used to seed dropout; defaults to the optimizer step.

    Returns:
        The batch loss before the update.
    """
    model.train()
    model.begin_step(adam.step if step is None else step)
    with Tape():
        loss = batch_loss(model, batch, visual, reduction)
        backward(loss)
    adam_step(model.named_parameters(), adam)
    return loss.item()


def evaluation_loss(model: M3TModel, examples: Sequence[EncodedExample], visual: VisualLoader,
                    batch_size: int = 16) -> float:
    """Mean token cross-entropy over a split, in inference mode."""
    if not examples:
        raise CorpusError("cannot compute a loss on an empty split")
    model.eval()
    total, tokens = 0.0, 0
    with no_grad():
        for batch in batch_iterator(examples, batch_size, shuffle=False):
            total += batch_loss(model, batch, visual, reduction="sum").item()
            tokens += int(batch.target_mask.sum())
    return total / tokens


@dataclass
class TrainerState:
    epoch: int = 0                      # completed epochs
    best_val: float = math.inf
    bad_epochs: int = 0
    stopped_early: bool = False

    def to_dict(self):
        return {"epoch": self.epoch, "best_val": float(self.best_val),
                "bad_epochs": self.bad_epochs, "stopped_early": self.stopped_early}

    @classmethod
    def from_dict(cls, data) -> "TrainerState":
        return cls(int(data.get("epoch", 0)), float(data.get("best_val", math.inf)),
                   int(data.get("bad_epochs", 0)), bool(data.get("stopped_early", False)))


@dataclass
class TrainingResult:
    state: TrainerState
    step: int
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)


def append_log(path: Path, rows: List[dict]):
    """Appends rows to the TSV log, writing the header only for a new file."""
    if not rows:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=LOG_COLUMNS)
    frame.to_csv(path, sep="\t", mode="a", header=not path.exists(), index=False,
                 float_format="%.9g", lineterminator="\n")


CheckpointHook = Callable[[M3TModel, AdamState, TrainerState, bool], None]


class Trainer:
    """
    Runs epochs over the training split.

    After each epoch the validation loss is computed; training stops once it
    has not improved for `patience` consecutive epochs, when `epochs` are
    done, or when `max_steps` optimizer steps have been taken.
    """

    def __init__(self, model: M3TModel, train_split: Sequence[EncodedExample],
                 val_split: Sequence[EncodedExample], visual: VisualLoader,
                 adam: Optional[AdamState] = None, state: Optional[TrainerState] = None,
                 log_path: Optional[Path] = None, on_epoch_end: Optional[CheckpointHook] = None):
        if not train_split:
            raise CorpusError("the training split is empty")
        t = model.config.training
        self.model = model
        self.settings = t
        self.train_split = list(train_split)
        self.val_split = list(val_split)
        self.visual = visual
        self.adam = adam or AdamState(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
        self.state = state or TrainerState()
        self.log_path = Path(log_path) if log_path else None
        self.on_epoch_end = on_epoch_end
        if not self.val_split:
            logger.warning("Validation split is empty; early stopping is disabled.")

    def _batches(self, epoch: int):
        batches = batch_iterator(self.train_split, self.settings.batch_size, PAD_ID,
                                 seed=self.settings.seed, epoch=epoch)
        return BatchPrefetcher(batches) if self.settings.prefetch else batches

    def _steps_exhausted(self) -> bool:
        return 0 < self.settings.max_steps <= self.adam.step

    def run(self) -> TrainingResult:
        t, state = self.settings, self.state
        result = TrainingResult(state=state, step=self.adam.step)
        logger.info(f"Training for up to {t.epochs} epochs on {len(self.train_split)} examples "
                    f"(batch {t.batch_size}, lr {t.lr}, starting at step {self.adam.step})")

        while state.epoch < t.epochs and not state.stopped_early and not self._steps_exhausted():
            epoch = state.epoch
            rows, losses = [], []
            batches = self._batches(epoch)
            try:
                for batch in batches:
                    loss = train_step(batch, self.model, self.adam, self.visual, reduction=t.loss_reduction)
                    losses.append(loss)
                    rows.append({"step": self.adam.step, "epoch": epoch, "split": "train", "loss": loss})
                    if self._steps_exhausted():
                        break
            finally:
                if isinstance(batches, BatchPrefetcher):
                    batches.close()
            result.train_losses.extend(losses)

            improved = False
            if self.val_split:
                val = evaluation_loss(self.model, self.val_split, self.visual, t.batch_size)
                result.val_losses.append(val)
                rows.append({"step": self.adam.step, "epoch": epoch, "split": "val", "loss": val})
                if val < state.best_val:
                    state.best_val, state.bad_epochs, improved = val, 0, True
                else:
                    state.bad_epochs += 1
                    if state.bad_epochs >= t.patience:
                        state.stopped_early = True
                logger.info(f"Epoch {epoch}: train loss {np.mean(losses):.4f}, val loss {val:.4f}"
                            + (" (best)" if improved else f" ({state.bad_epochs} without improvement)"))
            else:
                logger.info(f"Epoch {epoch}: train loss {np.mean(losses):.4f}")
            state.epoch += 1

            if self.log_path:
                append_log(self.log_path, rows)
            if self.on_epoch_end:
                self.on_epoch_end(self.model, self.adam, state, improved)

        if state.stopped_early:
            logger.info(f"Early stopping after epoch {state.epoch - 1}; best val loss {state.best_val:.4f}")
        result.step = self.adam.step
        return result


def overfit(model: M3TModel, examples: Sequence[EncodedExample], visual: VisualLoader, steps: int,
            adam: Optional[AdamState] = None) -> List[float]:
    """Repeats full-batch steps on a fixed set of examples; returns the loss curve."""
    adam = adam or AdamState(lr=model.config.training.lr)
    batch = make_batch(list(examples))
    return [train_step(batch, model, adam, visual) for _ in range(steps)]
