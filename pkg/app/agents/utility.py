import re
import string
from typing import Callable, Dict, Sequence

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCTUATION = frozenset(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop ASCII punctuation, drop articles, collapse whitespace"""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCTUATION)
    s = _ARTICLES_RE.sub(" ", s)
    return " ".join(s.split())


def utility_exact_match(prediction: str, answers: Sequence[str]) -> int:
    if not answers:
        raise ValueError("answers must be non-empty")
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(a) for a in answers))


def utility_accuracy(prediction: str, answers: Sequence[str]) -> int:
    if not answers:
        raise ValueError("answers must be non-empty")
    folded = prediction.strip().casefold()
    return int(any(folded == a.strip().casefold() for a in answers))


UTILITY_FUNCTIONS: Dict[str, Callable[[str, Sequence[str]], int]] = {
    "exact_match": utility_exact_match,
    "accuracy": utility_accuracy,
}
