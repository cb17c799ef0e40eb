"""
Corpus ingestion.

A corpus is a UTF-8 TSV file without header: one record per line with the
fields image path, comma-separated keywords and description. Image paths are
resolved relative to the corpus file; '.m3tf' paths are precomputed
features, anything else is a raw image.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from m3t_lib.core.exceptions import CorpusError
from m3t_lib.data_processing.text import keywords_to_sequence, normalize_text
from m3t_lib.data_processing.vocabulary import UNK_TOKEN, Vocabulary

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
COLUMNS = ["image", "keywords", "description"]
FEATURE_SUFFIX = ".m3tf"


@dataclass
class CorpusRecord:
    image: str
    keywords: str
    description: str
    line: int = 0

    @property
    def is_precomputed(self) -> bool:
        return self.image.lower().endswith(FEATURE_SUFFIX)


@dataclass
class PreparedExample:
    """A record after text preprocessing."""
    image: str
    keywords: List[str]
    description: List[str]
    line: int = 0


@dataclass
class EncodedExample:
    image: str
    keyword_ids: np.ndarray
    description_ids: np.ndarray
    line: int = 0


@dataclass
class SkipReport:
    """Records dropped or clipped during preprocessing."""
    dropped: List[Tuple[int, str]] = field(default_factory=list)
    clipped: List[Tuple[int, str]] = field(default_factory=list)

    def lines(self) -> List[str]:
        out = [f"dropped\tline {line}\t{reason}" for line, reason in self.dropped]
        out += [f"clipped\tline {line}\t{reason}" for line, reason in self.clipped]
        return out


def read_corpus(path: PathLike) -> List[CorpusRecord]:
    """
    Reads a corpus TSV.

    Image paths are returned resolved against the corpus directory.

    Raises:
        FileNotFoundError: the corpus file does not exist.
        CorpusError: a line without exactly three fields, or an empty corpus.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Corpus file not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=COLUMNS, dtype=str,
                            quoting=csv.QUOTE_NONE, keep_default_na=False, na_filter=True,
                            encoding="utf-8", skip_blank_lines=True)
    except pd.errors.ParserError as e:
        raise CorpusError(f"{path}: {e}") from e
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: not valid UTF-8 ({e})") from e

    base = path.parent
    records = []
    for index, row in frame.iterrows():
        line = int(index) + 1
        if row.isna().any():
            raise CorpusError(f"{path}: line {line} does not have {len(COLUMNS)} tab-separated fields")
        image = row["image"].strip()
        if not image:
            raise CorpusError(f"{path}: line {line} has an empty image path")
        image_path = Path(image)
        resolved = image_path if image_path.is_absolute() else base / image_path
        records.append(CorpusRecord(str(resolved), row["keywords"], row["description"], line))
    if not records:
        raise CorpusError(f"{path}: corpus is empty")
    logger.info(f"Read {len(records)} records from {path}")
    return records


def write_corpus(records: Sequence[CorpusRecord], path: PathLike, relative_to: PathLike = None):
    """Writes records as TSV; image paths are made relative to `relative_to` when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = Path(relative_to) if relative_to is not None else path.parent
    rows = []
    for r in records:
        image = Path(r.image)
        try:
            image = image.relative_to(base)
        except ValueError:
            pass
        for value in (r.keywords, r.description):
            if "\t" in value or "\n" in value:
                raise CorpusError(f"record for {r.image} contains a tab or newline")
        rows.append([image.as_posix(), r.keywords, r.description])
    frame = pd.DataFrame(rows, columns=COLUMNS)
    frame.to_csv(path, sep="\t", header=False, index=False, quoting=csv.QUOTE_NONE,
                 encoding="utf-8", lineterminator="\n")


def preprocess_records(records: Sequence[CorpusRecord], min_len: int, max_len: int
                       ) -> Tuple[List[PreparedExample], SkipReport]:
    """
    Normalises text and applies the description length policy.

    Descriptions shorter than `min_len` tokens are dropped and longer ones
    are clipped at `max_len`; both cases go to the skip report.
    """
    report = SkipReport()
    examples = []
    for r in records:
        description = normalize_text(r.description)
        if len(description) < min_len:
            report.dropped.append((r.line, f"description has {len(description)} tokens, minimum is {min_len}"))
            continue
        if len(description) > max_len:
            report.clipped.append((r.line, f"description clipped from {len(description)} to {max_len} tokens"))
            description = description[:max_len]
        examples.append(PreparedExample(r.image, keywords_to_sequence(r.keywords), description, r.line))
    if report.dropped or report.clipped:
        logger.warning(f"Preprocessing dropped {len(report.dropped)} and clipped {len(report.clipped)} records")
    return examples, report


def write_skip_report(report: SkipReport, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{line}\n" for line in report.lines()), encoding="utf-8")


def encode_examples(examples: Sequence[PreparedExample], vocab: Vocabulary) -> List[EncodedExample]:
    """Maps tokens to ids; an empty keyword sequence becomes a single [UNK]."""
    encoded = []
    for ex in examples:
        keywords = ex.keywords or [UNK_TOKEN]
        encoded.append(EncodedExample(
            image=ex.image,
            keyword_ids=np.asarray(vocab.encode(keywords), dtype=np.int64),
            description_ids=np.asarray(vocab.encode(ex.description), dtype=np.int64),
            line=ex.line,
        ))
    return encoded


def summarize_corpus(records: Sequence[CorpusRecord]) -> pd.DataFrame:
    """Per-modality record counts and mean token lengths (modality = first keyword)."""
    rows = []
    for r in records:
        keywords = [k.strip() for k in r.keywords.split(",") if k.strip()]
        rows.append({
            "modality": keywords[0] if keywords else "",
            "keywords": len(keywords),
            "description_tokens": len(normalize_text(r.description)),
        })
    frame = pd.DataFrame(rows)
    summary = frame.groupby("modality").agg(
        records=("keywords", "size"),
        mean_keywords=("keywords", "mean"),
        mean_description_tokens=("description_tokens", "mean"),
    )
    return summary.reset_index()
