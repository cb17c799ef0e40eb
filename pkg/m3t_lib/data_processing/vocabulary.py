"""
Token vocabulary with reserved special ids.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence

from m3t_lib.core.exceptions import ConfigError, TokenIndexError
from m3t_lib.data_processing.text import SEP_TOKEN

logger = logging.getLogger(__name__)

PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[BOS]", "[EOS]", SEP_TOKEN)
UNK_TOKEN = SPECIAL_TOKENS[UNK_ID]


@dataclass
class Vocabulary:
    """
    A bijection between tokens and ids.

    Ids 0-4 are reserved for [PAD], [UNK], [BOS], [EOS] and [SEP]; corpus
    tokens follow in rank order. `frequencies` keeps the full training
    frequency table, including tokens that did not make the cut.
    """
    tokens: List[str]
    frequencies: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ConfigError(f"vocabulary must start with the reserved tokens {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self._index = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def token_id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self._index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int], strip_special: bool = True) -> List[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise TokenIndexError(f"token id {i} outside vocabulary of {len(self.tokens)}")
            if strip_special and i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            out.append(self.tokens[i])
        return out

    def unk_rate(self, token_lists: Iterable[Sequence[str]]) -> float:
        """Fraction of tokens that map to [UNK]."""
        total = unknown = 0
        for tokens in token_lists:
            total += len(tokens)
            unknown += sum(1 for t in tokens if t not in self._index)
        return unknown / total if total else 0.0

    def to_dict(self) -> Dict:
        return {"tokens": list(self.tokens), "frequencies": dict(self.frequencies)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocabulary":
        return cls(tokens=list(data["tokens"]), frequencies=dict(data.get("frequencies", {})))


def build_vocab(token_lists: Iterable[Sequence[str]], cap: int, min_freq: int = 2) -> Vocabulary:
    """
    Builds a vocabulary from preprocessed token lists.

    Tokens are ranked by descending frequency with a lexicographic tie-break;
    tokens rarer than `min_freq` are dropped and at most cap - 5 corpus tokens
    are kept. Everything else maps to [UNK].

    Args:
        token_lists: Description and keyword token lists of the training split.
        cap: Maximum vocabulary size including the reserved tokens.
        min_freq: Minimum count for a token to receive its own id.
    """
    if cap < len(SPECIAL_TOKENS):
        raise ConfigError(f"vocabulary cap {cap} is smaller than the {len(SPECIAL_TOKENS)} reserved tokens")
    counts = Counter()
    for tokens in token_lists:
        counts.update(t for t in tokens if t not in SPECIAL_TOKENS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [token for token, n in ranked if n >= min_freq][: cap - len(SPECIAL_TOKENS)]
    vocab = Vocabulary(tokens=list(SPECIAL_TOKENS) + kept, frequencies=dict(counts))
    logger.info(f"Vocabulary built: {len(vocab)} ids from {len(counts)} distinct tokens (cap {cap}, min_freq {min_freq})")
    return vocab
