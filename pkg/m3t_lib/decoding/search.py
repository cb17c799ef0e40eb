"""
Greedy and beam-search generation.

Both searches query a model exposing

    encode(image, keyword_ids) -> F'            (fused features)
    next_token_logits(prefix, F') -> array[V]   (logits after the prefix)

and run without recording a tape. Generated ids exclude BOS and EOS; at
most `max_len` tokens are produced.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from m3t_lib.core.exceptions import ConfigError
from m3t_lib.core.interfaces import DecodingStrategy, TokenIds
from m3t_lib.data_processing.vocabulary import BOS_ID, EOS_ID
from m3t_lib.tensor.ops import log_softmax_rows
from m3t_lib.tensor.tensor import no_grad

logger = logging.getLogger(__name__)

LENGTH_PENALTY = 0.7


def greedy_decode(image, keyword_ids: TokenIds, model, max_len: int) -> List[int]:
    """Appends the argmax token (lowest id on ties) until EOS or max_len tokens."""
    with no_grad():
        f_prime = model.encode(image, keyword_ids)
        prefix = [BOS_ID]
        for _ in range(max_len):
            logits = model.next_token_logits(prefix, f_prime)
            token = int(np.argmax(logits))
            if token == EOS_ID:
                break
            prefix.append(token)
    return prefix[1:]


@dataclass
class Hypothesis:
    tokens: List[int]
    log_prob: float = 0.0
    finished: bool = False

    def normalized_score(self, alpha: float = LENGTH_PENALTY) -> float:
        # a finished hypothesis counts its EOS token
        length = len(self.tokens) + (1 if self.finished else 0)
        return self.log_prob / max(1, length) ** alpha


def beam_decode(image, keyword_ids: TokenIds, model, beam: int, max_len: int,
                alpha: float = LENGTH_PENALTY) -> List[int]:
    """
    Length-normalised beam search.

    Every alive hypothesis proposes its `beam` highest-logit continuations;
    the `beam` best by accumulated log-probability survive. Search ends when
    no hypothesis is alive or `beam` hypotheses have finished, and the best
    finished hypothesis by log_prob / length^alpha is returned. With beam=1
    this reproduces greedy_decode.
    """
    if beam < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam}")
    if max_len <= 0:
        return []
    with no_grad():
        f_prime = model.encode(image, keyword_ids)
        alive = [Hypothesis(tokens=[])]
        finished: List[Hypothesis] = []
        while alive and len(finished) < beam:
            candidates: List[Tuple[float, int, int, int]] = []
            for b, hyp in enumerate(alive):
                logits = np.asarray(model.next_token_logits([BOS_ID] + hyp.tokens, f_prime), dtype=np.float64)
                log_probs = log_softmax_rows(logits)
                for token in np.argsort(-logits, kind="stable")[:beam]:
                    candidates.append((hyp.log_prob + float(log_probs[token]), b, len(candidates), int(token)))
            candidates.sort(key=lambda c: (-c[0], c[2]))

            next_alive = []
            for score, b, _, token in candidates[:beam]:
                parent = alive[b]
                if token == EOS_ID:
                    finished.append(Hypothesis(list(parent.tokens), score, finished=True))
                    continue
                hyp = Hypothesis(parent.tokens + [token], score)
                if len(hyp.tokens) >= max_len:
                    finished.append(hyp)
                else:
                    next_alive.append(hyp)
            alive = next_alive

    pool = finished or alive
    best = max(pool, key=lambda h: h.normalized_score(alpha))
    logger.debug(f"Beam search kept {len(finished)} finished hypotheses, best score {best.log_prob:.4f}")
    return best.tokens


class GreedySearch(DecodingStrategy):

    def decode(self, model, image, keyword_ids: TokenIds, max_len: int) -> List[int]:
        return greedy_decode(image, keyword_ids, model, max_len)


@dataclass
class BeamSearch(DecodingStrategy):
    beam: int = 3
    alpha: float = LENGTH_PENALTY

    def decode(self, model, image, keyword_ids: TokenIds, max_len: int) -> List[int]:
        return beam_decode(image, keyword_ids, model, self.beam, max_len, self.alpha)


def make_strategy(beam_size: int) -> DecodingStrategy:
    """Greedy for beam_size 1, beam search otherwise."""
    if beam_size < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam_size}")
    return GreedySearch() if beam_size == 1 else BeamSearch(beam=beam_size)
