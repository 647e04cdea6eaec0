"""
Query/passage feature extraction for the second-stage scorer.

Feature schema (version 1), in order:

    0  first-stage BM25 score
    1  fraction of distinct query terms present in the passage text
    2  fraction of distinct passage-text terms present in the query
    3  log(1 + passage word_count)
    4  fraction of distinct query terms present in the passage title
    5  number of passage positions starting an exact query bigram
    6  1 / (1 + index of the first passage word holding a query term), 0.0 if none
    7  constant 1.0
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.corpus.passages import Passage
from app.corpus.tokenize import split_words, tokenize

FEATURE_SCHEMA_VERSION = 1
FEATURE_NAMES = (
    "bm25",
    "query_coverage",
    "passage_coverage",
    "log_length",
    "title_overlap",
    "bigram_matches",
    "first_match_position",
    "constant",
)
FEATURE_DIM = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_version: int = FEATURE_SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.values)


def extract_features(
    query: str,
    passage: Passage,
    first_stage_score: float,
    text_tokens: Optional[Sequence[str]] = None,
    title_tokens: Optional[Sequence[str]] = None,
    query_tokens: Optional[Sequence[str]] = None,
) -> FeatureVector:
    """
    Compute the fixed-order feature vector for one (query, passage) pair.

    Pre-tokenized text/title/query may be passed in by callers that cache
    them; they must come from the same tokenizer.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")

    q_tokens = list(query_tokens) if query_tokens is not None else tokenize(query)
    p_tokens = list(text_tokens) if text_tokens is not None else tokenize(passage.text)
    t_tokens = list(title_tokens) if title_tokens is not None else tokenize(passage.title)

    q_terms = set(q_tokens)
    p_terms = set(p_tokens)
    t_terms = set(t_tokens)

    query_coverage = len(q_terms & p_terms) / len(q_terms) if q_terms else 0.0
    passage_coverage = len(p_terms & q_terms) / len(p_terms) if p_terms else 0.0
    title_overlap = len(q_terms & t_terms) / len(q_terms) if q_terms else 0.0

    bigrams = set(zip(q_tokens, q_tokens[1:]))
    bigram_matches = sum(1 for pair in zip(p_tokens, p_tokens[1:]) if pair in bigrams)

    # positions are whitespace words, as in word_count
    first_position = next(
        (i for i, word in enumerate(split_words(passage.text)) if not q_terms.isdisjoint(tokenize(word))),
        None,
    )
    position_feature = 0.0 if first_position is None else 1.0 / (1.0 + first_position)

    values = np.array([
        float(first_stage_score),
        query_coverage,
        passage_coverage,
        math.log1p(passage.word_count),
        title_overlap,
        float(bigram_matches),
        position_feature,
        1.0,
    ], dtype=np.float64)
    return FeatureVector(values=values)
