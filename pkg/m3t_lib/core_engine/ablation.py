"""
Ablation sweep over the four model variants.

Every (seed, variant) pair trains from the same initialisation stream on the
same split and is scored on the held-out test split. The verdict checks the
expected ordering: the full model beats image-only on BLEU@4 for at least
four fifths of the seeds, and the keywords-without-attention median lies
between the two.
"""
import copy
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd

from m3t_lib.core.exceptions import CorpusError
from m3t_lib.core_engine.config import ABLATION_VARIANTS, AblationFlags, ModelConfig
from m3t_lib.core_engine.model import M3TModel, VisualInputCache
from m3t_lib.core_engine.pipeline import PreparedCorpus, evaluate_split
from m3t_lib.core_engine.trainer import Trainer

logger = logging.getLogger(__name__)

WIN_FRACTION = 0.8


@dataclass
class AblationVerdict:
    wins: int
    seeds: int
    median_image_only: float
    median_keywords: float
    median_full: float

    @property
    def full_beats_image_only(self) -> bool:
        return self.wins >= math.ceil(WIN_FRACTION * self.seeds)

    @property
    def keywords_in_between(self) -> bool:
        low, high = sorted((self.median_image_only, self.median_full))
        return low <= self.median_keywords <= high

    @property
    def passed(self) -> bool:
        return self.full_beats_image_only and self.keywords_in_between

    def describe(self) -> str:
        return (f"full > image_only on BLEU@4 in {self.wins}/{self.seeds} seeds; medians "
                f"image_only={self.median_image_only:.4f}, keywords={self.median_keywords:.4f}, "
                f"full={self.median_full:.4f}: {'PASS' if self.passed else 'FAIL'}")


@dataclass
class AblationResult:
    runs: pd.DataFrame        # one row per (seed, variant)
    medians: pd.DataFrame     # one row per variant
    verdict: AblationVerdict

    def save(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.runs.to_csv(out_dir / "ablation_runs.tsv", sep="\t", index=False, float_format="%.6f")
        self.medians.to_csv(out_dir / "ablation_summary.tsv", sep="\t", index=False, float_format="%.6f")
        (out_dir / "ablation_verdict.txt").write_text(self.verdict.describe() + "\n", encoding="utf-8")
        return out_dir


def variant_config(base: ModelConfig, variant: str, seed: int) -> ModelConfig:
    config = copy.deepcopy(base)
    config.ablation = AblationFlags.variant(variant)
    config.training.seed = seed
    return config.validate()


def train_and_score(config: ModelConfig, corpus: PreparedCorpus, visual: VisualInputCache) -> dict:
    train, val = corpus.split("train")[1], corpus.split("val")[1]
    model = M3TModel(config, len(corpus.vocab))
    Trainer(model, train, val, visual).run()
    prepared, encoded = corpus.split("test")
    if not encoded:
        raise CorpusError("the test split is empty; the ablation needs held-out examples")
    return evaluate_split(model, prepared, encoded, corpus.vocab, visual).report.to_dict()


def summarize(runs: pd.DataFrame) -> AblationResult:
    metrics = [c for c in runs.columns if c not in ("seed", "variant")]
    medians = runs.groupby("variant", sort=False)[metrics].median().reset_index()
    by_seed = runs.pivot(index="seed", columns="variant", values="bleu4")
    median = medians.set_index("variant")["bleu4"]
    verdict = AblationVerdict(
        wins=int((by_seed["full"] > by_seed["image_only"]).sum()),
        seeds=len(by_seed),
        median_image_only=float(median["image_only"]),
        median_keywords=float(median["keywords"]),
        median_full=float(median["full"]),
    )
    return AblationResult(runs, medians, verdict)


def run_ablation(base: ModelConfig, corpus: PreparedCorpus, seeds: Iterable[int],
                 variants: Optional[Sequence[str]] = None) -> AblationResult:
    """
    Trains and evaluates every variant for every seed.

    Args:
        base: Configuration whose ablation flags and seed are replaced per run.
        corpus: The prepared corpus; all runs share its split and vocabulary.
        seeds: Model / training seeds.
        variants: Subset of the variant names; all four by default. The
            verdict needs image_only, keywords and full.
    """
    variants = list(variants or ABLATION_VARIANTS)
    visual = VisualInputCache(base)
    rows: List[dict] = []
    for seed in seeds:
        for variant in variants:
            logger.info(f"Ablation run: variant '{variant}', seed {seed}")
            scores = train_and_score(variant_config(base, variant, seed), corpus, visual)
            rows.append({"seed": seed, "variant": variant, **scores})
    result = summarize(pd.DataFrame(rows))
    logger.info(f"Ablation verdict: {result.verdict.describe()}")
    return result
