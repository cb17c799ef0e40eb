"""
Metric reports and their serialisation.
"""
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

from m3t_lib.core.exceptions import MetricError
from m3t_lib.evaluation.metrics import Sentence, bleu, cider, rouge_l

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def to_text(self) -> str:
        """Flat key=value lines."""
        return "".join(f"{k}={v:.6f}\n" for k, v in self.to_dict().items())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "MetricReport":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise MetricError(f"metric report is missing {missing}")
        return cls(**{n: float(data[n]) for n in names})

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        pairs = (line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls.from_dict({k.strip(): float(v) for k, v in pairs})

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() if path.suffix == ".json" else self.to_text(), encoding="utf-8")


def evaluate_corpus(cands: Sequence[Sentence], refs: Sequence[Sentence], smoothing: bool = False,
                    sentence_bleu: bool = False, cider_d: bool = False) -> MetricReport:
    """
    Computes all six metrics for one corpus.

    CIDEr is reported as 0.0 for single-pair corpora, where document
    frequencies are undefined.
    """
    scores = {f"bleu{n}": bleu(cands, refs, n, smoothing=smoothing, sentence_average=sentence_bleu)
              for n in range(1, 5)}
    scores["rouge_l"] = rouge_l(cands, refs)
    if len(cands) >= 2:
        scores["cider"] = cider(cands, refs, clipped=cider_d)
    else:
        logger.warning("CIDEr needs at least two pairs; reporting 0.0")
        scores["cider"] = 0.0
    report = MetricReport(**scores)
    logger.info("Metrics: " + ", ".join(f"{k}={v:.4f}" for k, v in report.to_dict().items()))
    return report
