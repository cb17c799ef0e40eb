"""
Captioning metrics: corpus BLEU@1-4, ROUGE-L and CIDEr / CIDEr-D.

Each candidate has exactly one reference. Sentences may be given as token
lists or as raw strings; raw strings are tokenised with `normalize_text`,
the same tokenisation used for training.
"""
import logging
import math
from collections import Counter
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from m3t_lib.core.exceptions import MetricError
from m3t_lib.data_processing.text import normalize_text

logger = logging.getLogger(__name__)

Sentence = Union[str, Sequence[str]]
NGramCounts = Counter

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4


def tokens_of(sentence: Sentence) -> List[str]:
    return normalize_text(sentence) if isinstance(sentence, str) else list(sentence)


def ngram_counts(tokens: Sequence[str], n: int) -> NGramCounts:
    """Counts of the n-grams of exactly order n; len - n + 1 of them in total."""
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _prepare(cands: Sequence[Sentence], refs: Sequence[Sentence]) -> Tuple[List[List[str]], List[List[str]]]:
    if len(cands) != len(refs):
        raise MetricError(f"{len(cands)} candidates but {len(refs)} references")
    if not cands:
        raise MetricError("metrics are undefined on an empty corpus")
    return [tokens_of(c) for c in cands], [tokens_of(r) for r in refs]


def _clipped_matches(cand: List[str], ref: List[str], n: int) -> Tuple[int, int]:
    counts = ngram_counts(cand, n)
    ref_counts = ngram_counts(ref, n)
    matched = sum(min(c, ref_counts[g]) for g, c in counts.items())
    return matched, max(0, len(cand) - n + 1)


def _bleu_from_stats(matches: Sequence[int], totals: Sequence[int], cand_len: int, ref_len: int,
                     smoothing: bool) -> float:
    log_sum = 0.0
    order = len(matches)
    for k, (m, t) in enumerate(zip(matches, totals)):
        if smoothing and k > 0 and m == 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t) / order
    if cand_len == 0:
        return 0.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_sum)


def bleu(cands: Sequence[Sentence], refs: Sequence[Sentence], n: int = 4,
         smoothing: bool = False, sentence_average: bool = False) -> float:
    """
    BLEU with uniform weights over orders 1..n.

    Args:
        cands: Candidate sentences.
        refs: One reference per candidate.
        n: Highest n-gram order (1-4).
        smoothing: Add one to the matches and totals of any order >= 2 with no match.
        sentence_average: Average per-sentence BLEU instead of pooling counts.

    Returns:
        A score in [0, 1].
    """
    if not 1 <= n <= 4:
        raise MetricError(f"BLEU order must be in 1..4, got {n}")
    cand_tokens, ref_tokens = _prepare(cands, refs)
    if sentence_average:
        scores = [_bleu_from_stats(*zip(*[_clipped_matches(c, r, k) for k in range(1, n + 1)]),
                                   len(c), len(r), smoothing)
                  for c, r in zip(cand_tokens, ref_tokens)]
        return float(np.mean(scores))
    matches, totals = [0] * n, [0] * n
    for c, r in zip(cand_tokens, ref_tokens):
        for k in range(1, n + 1):
            m, t = _clipped_matches(c, r, k)
            matches[k - 1] += m
            totals[k - 1] += t
    cand_len = sum(len(c) for c in cand_tokens)
    ref_len = sum(len(r) for r in ref_tokens)
    return _bleu_from_stats(matches, totals, cand_len, ref_len, smoothing)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b):
            curr.append(prev[j] + 1 if x == y else max(prev[j + 1], curr[j]))
        prev = curr
    return prev[-1]


def rouge_l_pair(cand: Sequence[str], ref: Sequence[str], beta: float = ROUGE_BETA) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return ((1 + beta ** 2) * precision * recall) / (recall + beta ** 2 * precision)


def rouge_l(cands: Sequence[Sentence], refs: Sequence[Sentence], beta: float = ROUGE_BETA) -> float:
    """Mean per-pair ROUGE-L F-measure."""
    cand_tokens, ref_tokens = _prepare(cands, refs)
    return float(np.mean([rouge_l_pair(c, r, beta) for c, r in zip(cand_tokens, ref_tokens)]))


def _tfidf(tokens: List[str], doc_freq: Dict[tuple, int], log_docs: float, max_n: int):
    vectors, norms = [], []
    for n in range(1, max_n + 1):
        vec = {g: tf * (log_docs - math.log(max(1.0, doc_freq.get(g, 0))))
               for g, tf in ngram_counts(tokens, n).items()}
        vectors.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vectors, norms


def cider(cands: Sequence[Sentence], refs: Sequence[Sentence], clipped: bool = False,
          sigma: float = CIDER_SIGMA, max_n: int = CIDER_MAX_N) -> float:
    """
    CIDEr: mean over pairs of 10 · mean_n cos(tfidf_n(cand), tfidf_n(ref)).

    Document frequencies come from the reference corpus and idf is
    log(N) - log(max(1, df)). With `clipped` the CIDEr-D variant is computed:
    candidate weights are clipped at the reference weights and each pair is
    scaled by exp(-(len_c - len_r)^2 / (2 sigma^2)).
    """
    cand_tokens, ref_tokens = _prepare(cands, refs)
    if len(cand_tokens) < 2:
        raise MetricError("CIDEr needs at least 2 candidate/reference pairs")
    doc_freq: Counter = Counter()
    for r in ref_tokens:
        doc_freq.update({g for n in range(1, max_n + 1) for g in ngram_counts(r, n)})
    log_docs = math.log(float(len(ref_tokens)))

    scores = []
    for c, r in zip(cand_tokens, ref_tokens):
        vec_c, norm_c = _tfidf(c, doc_freq, log_docs, max_n)
        vec_r, norm_r = _tfidf(r, doc_freq, log_docs, max_n)
        sims = []
        for n in range(max_n):
            if norm_c[n] == 0.0 or norm_r[n] == 0.0:
                sims.append(0.0)
                continue
            if clipped:
                dot = sum(min(v, vec_r[n].get(g, 0.0)) * vec_r[n].get(g, 0.0) for g, v in vec_c[n].items())
            else:
                dot = sum(v * vec_r[n].get(g, 0.0) for g, v in vec_c[n].items())
            sims.append(dot / (norm_c[n] * norm_r[n]))
        score = float(np.mean(sims)) * 10.0
        if clipped:
            score *= math.exp(-((len(c) - len(r)) ** 2) / (2.0 * sigma ** 2))
        scores.append(score)
    return float(np.mean(scores))
