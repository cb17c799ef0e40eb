"""
Corpus preparation and split evaluation shared by the commands.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

from m3t_lib.core.interfaces import DecodingStrategy
from m3t_lib.core_engine.config import ModelConfig
from m3t_lib.core_engine.model import M3TModel, VisualInputCache
from m3t_lib.data_processing.corpus import (EncodedExample, PreparedExample, SkipReport, encode_examples,
                                            preprocess_records, read_corpus)
from m3t_lib.data_processing.splits import split_dataset
from m3t_lib.data_processing.vocabulary import Vocabulary, build_vocab
from m3t_lib.decoding.search import make_strategy
from m3t_lib.evaluation.report import MetricReport, evaluate_corpus

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class PreparedCorpus:
    """A corpus split three ways, with a vocabulary built on the training part."""
    vocab: Vocabulary
    prepared: Tuple[List[PreparedExample], List[PreparedExample], List[PreparedExample]]
    skip_report: SkipReport

    def __post_init__(self):
        self.encoded = tuple(encode_examples(part, self.vocab) for part in self.prepared)

    def split(self, name: str) -> Tuple[List[PreparedExample], List[EncodedExample]]:
        if name not in SPLITS:
            raise KeyError(f"Unknown split '{name}', expected one of {SPLITS}")
        i = SPLITS.index(name)
        return self.prepared[i], self.encoded[i]


def prepare_corpus(config: ModelConfig, corpus: Union[str, Path], vocab: Optional[Vocabulary] = None
                   ) -> PreparedCorpus:
    """
    Reads, preprocesses and splits a corpus.

    Args:
        config: Supplies the length policy, split fractions and vocabulary cap.
        corpus: The corpus TSV.
        vocab: An existing vocabulary (from a checkpoint); built from the
            training split when omitted.
    """
    d = config.data
    records = read_corpus(corpus)
    examples, report = preprocess_records(records, d.min_description_len, d.max_description_len)
    train, val, test = split_dataset(examples, config.split_spec())
    if vocab is None:
        vocab = build_vocab([ex.keywords + ex.description for ex in train], d.vocab_cap, d.min_freq)
        logger.info(f"Vocabulary of {len(vocab)} tokens; training UNK rate "
                    f"{vocab.unk_rate(ex.description for ex in train):.3f}")
    return PreparedCorpus(vocab, (train, val, test), report)


def generate_descriptions(model: M3TModel, examples: Sequence[EncodedExample], vocab: Vocabulary,
                          visual: VisualInputCache, strategy: Optional[DecodingStrategy] = None,
                          max_len: Optional[int] = None) -> List[List[str]]:
    """Decodes every example in inference mode; returns token lists without special tokens."""
    config = model.config
    strategy = strategy or make_strategy(config.evaluation.beam_size)
    max_len = max_len or config.decode_len
    model.eval()
    out = []
    for ex in examples:
        ids = strategy.decode(model, visual(ex.image), ex.keyword_ids, max_len)
        out.append(vocab.decode(ids))
    return out


@dataclass
class SplitEvaluation:
    report: MetricReport
    samples: pd.DataFrame


def evaluate_split(model: M3TModel, prepared: Sequence[PreparedExample], encoded: Sequence[EncodedExample],
                   vocab: Vocabulary, visual: VisualInputCache) -> SplitEvaluation:
    """
    Metrics of one split against the preprocessed references.

    With `evaluation.oracle_decode` the references themselves are scored as
    candidates, a sanity check of the metric plumbing.
    """
    e = model.config.evaluation
    refs = [ex.description for ex in prepared]
    if e.oracle_decode:
        logger.warning("Oracle decoding: scoring the references against themselves")
        cands = [list(r) for r in refs]
    else:
        cands = generate_descriptions(model, encoded, vocab, visual)
    report = evaluate_corpus(cands, refs, smoothing=e.bleu_smoothing, sentence_bleu=e.sentence_bleu,
                             cider_d=e.cider_d)
    samples = pd.DataFrame([{"image": ex.image, "keywords": ", ".join(ex.keywords),
                             "ground_truth": " ".join(ref), "generated": " ".join(cand)}
                            for ex, ref, cand in zip(prepared, refs, cands)][: e.sample_rows])
    return SplitEvaluation(report, samples)
