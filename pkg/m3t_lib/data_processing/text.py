"""
Text normalisation for descriptions and keywords.
"""
import re
from typing import List

SEP_TOKEN = "[SEP]"

_NON_ALPHA = re.compile(r"[^a-z]+")


def normalize_text(s: str) -> List[str]:
    """
    Lowercases, replaces every run of non-alphabetic characters by a space and
    splits on whitespace.

    Example:
        "Age-related Macular Degeneration (AMD)" -> ['age', 'related', 'macular', 'degeneration', 'amd']
    """
    return _NON_ALPHA.sub(" ", s.lower()).split()


def keywords_to_sequence(s: str) -> List[str]:
    """Normalises each comma-separated keyword and joins the non-empty ones with [SEP]."""
    tokens: List[str] = []
    for segment in s.split(","):
        words = normalize_text(segment)
        if not words:
            continue
        if tokens:
            tokens.append(SEP_TOKEN)
        tokens.extend(words)
    return tokens
