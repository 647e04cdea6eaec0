import re
from typing import List

# Maximal runs of Unicode letters/digits; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercase and split on non-alphanumeric boundaries.

    Shared by the inverted index, query parsing and feature extraction so
    that query and document terms always line up.
    """
    return _TOKEN_RE.findall(text.lower())


def split_words(text: str) -> List[str]:
    """Words for passage chunking: maximal runs of non-whitespace."""
    return text.split()
