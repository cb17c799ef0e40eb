"""
The operations behind the command-line subcommands.

Each command takes a validated configuration plus its own arguments, does
its work, logs a summary and returns a result object; exit codes are the
runner's business.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from m3t_lib.core.exceptions import ConfigError, CorpusError
from m3t_lib.core_engine.ablation import AblationResult, run_ablation
from m3t_lib.core_engine.checkpoint import load_checkpoint, restore_model, save_checkpoint
from m3t_lib.core_engine.config import ModelConfig, profile_defaults
from m3t_lib.core_engine.gradcheck_suite import GradcheckResult, DEFAULT_SEEDS, results_frame, run_gradcheck_suite
from m3t_lib.core_engine.model import M3TModel, VisualInputCache, load_visual_input
from m3t_lib.core_engine.pipeline import SplitEvaluation, evaluate_split, prepare_corpus
from m3t_lib.core_engine.shape_trace import trace_frame, trace_shapes
from m3t_lib.core_engine.trainer import Trainer, TrainerState, TrainingResult
from m3t_lib.data_processing.corpus import read_corpus, summarize_corpus, write_skip_report
from m3t_lib.data_processing.synthetic import generate_synthetic_corpus, write_synthetic_corpus
from m3t_lib.data_processing.text import keywords_to_sequence
from m3t_lib.data_processing.vocabulary import UNK_TOKEN
from m3t_lib.decoding.search import make_strategy
from m3t_lib.io.yaml_writer import save_config_to_yaml
from m3t_lib.tensor.optim import AdamState
from m3t_lib.visual.feature_map import FeatureMap
from m3t_lib.visual.heatmap import export_gate_heatmap, render_overlay

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
BEST_PREFIX = "best_"


def _corpus_path(config: ModelConfig, corpus: Optional[PathLike]) -> Path:
    path = corpus or config.paths.corpus
    if not path:
        raise CorpusError("no corpus given; pass one on the command line or set paths.corpus")
    return Path(path)


def _output_dir(config: ModelConfig) -> Path:
    out = Path(config.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- train ---

def cmd_train(config: ModelConfig, corpus: Optional[PathLike] = None,
              resume: Optional[PathLike] = None) -> TrainingResult:
    """
    Trains a model, checkpointing after every epoch.

    The latest state goes to paths.checkpoint inside the output directory,
    the state with the lowest validation loss to 'best_' + that name. With
    `resume`, model, optimizer and trainer state continue from a checkpoint.
    """
    out = _output_dir(config)
    checkpoint_path = out / config.paths.checkpoint
    best_path = out / (BEST_PREFIX + config.paths.checkpoint)

    vocab, adam, state = None, None, None
    if resume:
        ckpt = load_checkpoint(resume)
        vocab, adam, state = ckpt.vocab, ckpt.adam_state(), ckpt.trainer_state()
        logger.info(f"Resuming from {resume} at epoch {state.epoch}, step {adam.step}")

    data = prepare_corpus(config, _corpus_path(config, corpus), vocab)
    write_skip_report(data.skip_report, out / config.paths.skip_report)
    save_config_to_yaml(config, out / "config.yml")
    vocab = data.vocab

    if resume:
        model = restore_model(ckpt, config)
        adam.lr = config.training.lr
    else:
        model = M3TModel(config, len(vocab))
        adam = AdamState(lr=config.training.lr, beta1=config.training.beta1,
                         beta2=config.training.beta2, eps=config.training.eps)

    def _checkpoint(model: M3TModel, adam: AdamState, state: TrainerState, improved: bool):
        save_checkpoint(checkpoint_path, model, vocab, adam, state)
        if improved:
            save_checkpoint(best_path, model, vocab, adam, state)

    trainer = Trainer(model, data.split("train")[1], data.split("val")[1], VisualInputCache(config),
                      adam=adam, state=state, log_path=out / config.paths.log, on_epoch_end=_checkpoint)
    result = trainer.run()
    if not checkpoint_path.exists():
        _checkpoint(model, trainer.adam, trainer.state, False)
    logger.info(f"Training finished after {result.state.epoch} epochs and {result.step} steps; "
                f"checkpoint at {checkpoint_path}")
    return result


# --- eval / generate ---

def cmd_eval(checkpoint: PathLike, corpus: Optional[PathLike] = None, split: str = "test",
             config: Optional[ModelConfig] = None) -> SplitEvaluation:
    """
    Decodes a split with the checkpoint's vocabulary and scores it.

    Writes metrics_<split>.txt / .json and a qualitative samples_<split>.tsv
    to the output directory.
    """
    ckpt = load_checkpoint(checkpoint)
    config = config or ckpt.config
    model = restore_model(ckpt, config)
    data = prepare_corpus(config, _corpus_path(config, corpus), ckpt.vocab)
    prepared, encoded = data.split(split)
    if not encoded:
        raise CorpusError(f"the {split} split is empty")
    logger.info(f"Evaluating {len(encoded)} {split} examples with beam size {config.evaluation.beam_size}")
    result = evaluate_split(model, prepared, encoded, ckpt.vocab, VisualInputCache(config))

    out = _output_dir(config)
    result.report.save(out / f"metrics_{split}.txt")
    result.report.save(out / f"metrics_{split}.json")
    result.samples.to_csv(out / f"samples_{split}.tsv", sep="\t", index=False)
    return result


@dataclass
class GenerationResult:
    text: str
    tokens: List[str]
    heatmap: Optional[Path] = None
    overlay: Optional[Path] = None


def cmd_generate(checkpoint: PathLike, image: PathLike, keywords: str = "",
                 heatmap: Optional[PathLike] = None, overlay: Optional[PathLike] = None,
                 config: Optional[ModelConfig] = None) -> GenerationResult:
    """
    Describes one image.

    Args:
        checkpoint: A trained M3TC file.
        image: An image file or a precomputed '.m3tf' feature file.
        keywords: Comma-separated keywords.
        heatmap: Optional .pgm target for the lesion-gate map.
        overlay: Optional .png target for the map blended over the image.
    """
    ckpt = load_checkpoint(checkpoint)
    config = config or ckpt.config
    model = restore_model(ckpt, config).eval()
    visual = load_visual_input(image, config)
    keyword_ids = ckpt.vocab.encode(keywords_to_sequence(keywords) or [UNK_TOKEN])

    strategy = make_strategy(config.evaluation.beam_size)
    ids = strategy.decode(model, visual, np.asarray(keyword_ids), config.decode_len)
    tokens = ckpt.vocab.decode(ids)
    result = GenerationResult(" ".join(tokens), tokens)

    if heatmap or overlay:
        alpha = model.last_gate_map
        if alpha is None:
            raise ConfigError("heatmaps need the lesion gate; this model was trained without visual attention")
        if heatmap:
            export_gate_heatmap(alpha, heatmap)
            result.heatmap = Path(heatmap)
        if overlay:
            if isinstance(visual, FeatureMap):
                raise ConfigError("an overlay needs the input image, not precomputed features")
            render_overlay(visual, alpha, overlay)
            result.overlay = Path(overlay)
    return result


# --- verification and utilities ---

def cmd_gradcheck(seeds: Iterable[int] = DEFAULT_SEEDS, cases: Optional[Sequence[str]] = None
                  ) -> List[GradcheckResult]:
    results = run_gradcheck_suite(seeds, cases)
    for row in results_frame(results).itertuples(index=False):
        logger.info(f"{row.case:<22} seeds={row.seeds} max_error={row.max_error:.3e} "
                    f"{'ok' if row.passed else 'FAILED'}")
    return results


def cmd_synth(n: int, seed: int, out: PathLike, image_size: int = 64) -> pd.DataFrame:
    """Writes a synthetic corpus and returns its per-modality summary."""
    corpus = write_synthetic_corpus(generate_synthetic_corpus(n, seed, image_size), out)
    summary = summarize_corpus(read_corpus(corpus))
    logger.info("Synthetic corpus summary:\n" + summary.to_string(index=False))
    return summary


def cmd_init_config(profile: str, out: PathLike) -> Path:
    return save_config_to_yaml(profile_defaults(profile).validate(), out)


def cmd_ablate(config: ModelConfig, corpus: Optional[PathLike] = None,
               seeds: Iterable[int] = DEFAULT_SEEDS) -> AblationResult:
    data = prepare_corpus(config, _corpus_path(config, corpus))
    result = run_ablation(config, data, list(seeds))
    result.save(_output_dir(config))
    logger.info("Ablation medians:\n" + result.medians.to_string(index=False))
    return result


def cmd_trace_shapes(config: ModelConfig) -> pd.DataFrame:
    frame = trace_frame(trace_shapes(config))
    logger.info(f"Shape trace for profile '{config.profile}':\n" + frame.to_string(index=False))
    return frame
