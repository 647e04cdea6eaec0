import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

from app.corpus.tokenize import split_words, tokenize
from app.errors import CorpusFormatError, DuplicatePassageError

logger = logging.getLogger(__name__)

DEFAULT_MAX_WORDS = 100
HEADER_ID = "id"


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    title: str
    body: str


@dataclass(frozen=True)
class Passage:
    passage_id: str
    title: str
    text: str
    word_count: int

    @property
    def indexable_text(self) -> str:
        """Title concatenated with the chunk, separated by a single space"""
        return f"{self.title} {self.text}"


def passage_id_for(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal}"


def split_document(doc: RawDocument, max_words: int = DEFAULT_MAX_WORDS) -> List[Passage]:
    """
    Split a document body into title-prefixed passages of at most max_words words

    Args:
        doc: Source document
        max_words: Maximum number of body words per passage

    Returns:
        Passages in body order with contiguous 0-based ordinals. An empty body
        yields an empty list.
    """
    if max_words < 1:
        raise ValueError(f"max_words must be >= 1, got {max_words}")

    words = split_words(doc.body)
    passages = []
    for ordinal, start in enumerate(range(0, len(words), max_words)):
        chunk = words[start:start + max_words]
        passages.append(Passage(
            passage_id=passage_id_for(doc.doc_id, ordinal),
            title=doc.title,
            text=" ".join(chunk),
            word_count=len(chunk),
        ))
    return passages


def load_tsv(path: Union[str, Path], strict: bool = True) -> Iterator[RawDocument]:
    """
    Stream documents from a three-column TSV file (id, text, title)

    A first line whose first field is literally "id" is treated as a header.
    Lines with fewer than three fields raise CorpusFormatError in strict mode
    and are skipped with a warning otherwise.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                line = line[:-1]
            fields = line.split("\t")
            if line_number == 1 and fields[0] == HEADER_ID:
                continue
            if len(fields) < 3:
                if strict:
                    raise CorpusFormatError(
                        f"expected 3 tab-separated fields, found {len(fields)}", line_number
                    )
                logger.warning(f"Skipping malformed corpus line {line_number} ({len(fields)} fields)")
                continue
            yield RawDocument(doc_id=fields[0], body=fields[1], title=fields[2])


def write_tsv(docs: Iterable[RawDocument], path: Union[str, Path], header: bool = True) -> int:
    """Write documents in the load_tsv format; returns the number written"""
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header:
            handle.write("id\ttext\ttitle\n")
        for doc in docs:
            handle.write(f"{doc.doc_id}\t{doc.body}\t{doc.title}\n")
            count += 1
    return count


class PassageStore:
    """Immutable passage collection with id lookup and cached token lists"""

    def __init__(self, passages: Iterable[Passage]):
        self._passages: List[Passage] = []
        self._by_id: Dict[str, Passage] = {}
        for passage in passages:
            if passage.passage_id in self._by_id:
                raise DuplicatePassageError(passage.passage_id)
            self._by_id[passage.passage_id] = passage
            self._passages.append(passage)
        self._text_tokens: Dict[str, List[str]] = {}
        self._title_tokens: Dict[str, List[str]] = {}

    @classmethod
    def from_documents(cls, docs: Iterable[RawDocument], max_words: int = DEFAULT_MAX_WORDS) -> "PassageStore":
        passages: List[Passage] = []
        doc_count = 0
        for doc in docs:
            passages.extend(split_document(doc, max_words))
            doc_count += 1
        logger.info(f"Split {doc_count} documents into {len(passages)} passages")
        return cls(passages)

    @classmethod
    def from_tsv(cls, path: Union[str, Path], max_words: int = DEFAULT_MAX_WORDS, strict: bool = True) -> "PassageStore":
        return cls.from_documents(load_tsv(path, strict=strict), max_words)

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def get(self, passage_id: str) -> Optional[Passage]:
        return self._by_id.get(passage_id)

    def __getitem__(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    def text_tokens(self, passage_id: str) -> List[str]:
        tokens = self._text_tokens.get(passage_id)
        if tokens is None:
            tokens = tokenize(self._by_id[passage_id].text)
            self._text_tokens[passage_id] = tokens
        return tokens

    def title_tokens(self, passage_id: str) -> List[str]:
        tokens = self._title_tokens.get(passage_id)
        if tokens is None:
            tokens = tokenize(self._by_id[passage_id].title)
            self._title_tokens[passage_id] = tokens
        return tokens
