import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

from app.corpus.passages import Passage
from app.corpus.tokenize import tokenize
from app.errors import DuplicatePassageError, IndexFormatError

logger = logging.getLogger(__name__)

K1 = 1.2
B = 0.75
DEFAULT_FIRST_STAGE_N = 100

SNAPSHOT_MAGIC = b"IUMIDX"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Candidate:
    passage_id: str
    first_stage_score: float


@dataclass
class InvertedIndex:
    """Term -> [(ordinal, tf)] postings plus per-passage lengths"""

    postings: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)
    doc_lengths: List[int] = field(default_factory=list)
    passage_ids: List[str] = field(default_factory=list)
    avg_doc_length: float = 0.0
    k1: float = K1
    b: float = B

    @property
    def num_docs(self) -> int:
        return len(self.doc_lengths)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = self.num_docs
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)


def build_index(passages: Iterable[Passage], k1: float = K1, b: float = B) -> InvertedIndex:
    """
    Build an inverted index over title + space + text of each passage

    Raises DuplicatePassageError on the first repeated passage_id.
    """
    index = InvertedIndex(k1=k1, b=b)
    seen = set()
    total_length = 0

    for passage in passages:
        if passage.passage_id in seen:
            raise DuplicatePassageError(passage.passage_id)
        seen.add(passage.passage_id)

        ordinal = len(index.doc_lengths)
        tokens = tokenize(passage.indexable_text)
        index.passage_ids.append(passage.passage_id)
        index.doc_lengths.append(len(tokens))
        total_length += len(tokens)

        # Ordinals grow monotonically, so every postings list stays sorted.
        for term, tf in Counter(tokens).items():
            index.postings.setdefault(term, []).append((ordinal, tf))

    index.avg_doc_length = total_length / index.num_docs if index.num_docs else 0.0
    logger.info(f"Indexed {index.num_docs} passages, {len(index.postings)} terms, "
                f"avg length {index.avg_doc_length:.2f}")
    return index


def bm25_retrieve(index: InvertedIndex, query: str, n: int = DEFAULT_FIRST_STAGE_N) -> List[Candidate]:
    """
    First-stage Okapi BM25 retrieval

    Args:
        index: Built inverted index
        query: Raw query text, tokenized like the index
        n: Maximum number of candidates

    Returns:
        Up to n candidates by score descending, ties by passage_id ascending.
        Passages sharing no term with the query are never returned.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")

    terms = set(tokenize(query))
    if not terms or index.num_docs == 0:
        return []

    scores: Dict[int, float] = {}
    avgdl = index.avg_doc_length
    for term in terms:
        postings = index.postings.get(term)
        if not postings:
            continue
        idf = index.idf(term)
        for ordinal, tf in postings:
            norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths[ordinal] / avgdl)
            scores[ordinal] = scores.get(ordinal, 0.0) + idf * tf * (index.k1 + 1.0) / (tf + norm)

    ranked = sorted(
        (Candidate(index.passage_ids[ordinal], score) for ordinal, score in scores.items()),
        key=lambda c: (-c.first_stage_score, c.passage_id),
    )
    return ranked[:n]


def save_index(index: InvertedIndex, path: Union[str, Path]) -> None:
    """Write a snapshot: magic header, version byte, JSON body"""
    body = {
        "k1": index.k1,
        "b": index.b,
        "avg_doc_length": index.avg_doc_length,
        "passage_ids": index.passage_ids,
        "doc_lengths": index.doc_lengths,
        "postings": {term: [list(p) for p in plist] for term, plist in sorted(index.postings.items())},
    }
    with open(path, "wb") as handle:
        handle.write(SNAPSHOT_MAGIC)
        handle.write(bytes([SNAPSHOT_VERSION]))
        handle.write(json.dumps(body, separators=(",", ":")).encode("utf-8"))
    logger.info(f"Saved index snapshot with {index.num_docs} passages to {path}")


def load_index(path: Union[str, Path]) -> InvertedIndex:
    with open(path, "rb") as handle:
        raw = handle.read()

    header_len = len(SNAPSHOT_MAGIC)
    if len(raw) <= header_len or raw[:header_len] != SNAPSHOT_MAGIC:
        raise IndexFormatError(f"{path}: not an index snapshot (bad magic)")
    version = raw[header_len]
    if version != SNAPSHOT_VERSION:
        raise IndexFormatError(f"{path}: unsupported snapshot version {version}")

    try:
        body = json.loads(raw[header_len + 1:].decode("utf-8"))
        index = InvertedIndex(
            postings={term: [(int(o), int(tf)) for o, tf in plist] for term, plist in body["postings"].items()},
            doc_lengths=[int(x) for x in body["doc_lengths"]],
            passage_ids=list(body["passage_ids"]),
            avg_doc_length=float(body["avg_doc_length"]),
            k1=float(body["k1"]),
            b=float(body["b"]),
        )
    except (ValueError, KeyError, TypeError) as e:
        raise IndexFormatError(f"{path}: truncated or corrupt snapshot ({e})") from e

    if len(index.passage_ids) != index.num_docs:
        raise IndexFormatError(f"{path}: ordinal table and doc_lengths disagree")
    return index
