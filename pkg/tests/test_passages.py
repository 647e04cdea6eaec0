import pytest
import numpy as np
from app.corpus.passages import PassageStore, RawDocument, load_tsv, split_document, write_tsv
from app.corpus.tokenize import split_words, tokenize
from app.errors import CorpusFormatError, DuplicatePassageError

class TestTokenize:
    """Test cases for the shared tokenizer"""

    def test_lowercases_and_splits_on_punctuation(self):
        """Test that punctuation and case never create distinct terms"""
        assert tokenize("Who founded Apple, Inc.?") == ["who", "founded", "apple", "inc"]

    def test_underscore_is_a_separator(self):
        """Test that underscores split tokens"""
        assert tokenize("snake_case word") == ["snake", "case", "word"]

    def test_unicode_letters_are_kept(self):
        """Test that accented letters stay inside their token"""
        assert tokenize("Bogotá, Colombia") == ["bogotá", "colombia"]

    def test_empty_text(self):
        """Test that blank text has no tokens"""
        assert tokenize("  \t ") == []

    def test_split_words_uses_whitespace(self):
        """Test that chunking words keep punctuation attached"""
        assert split_words("a, b.  c") == ["a,", "b.", "c"]

class TestSplitDocument:
    """Test cases for document chunking"""

    def test_250_words_make_three_passages(self):
        """Test a 250-word body at 100 words per passage"""
        body = " ".join(f"w{i}" for i in range(250))
        passages = split_document(RawDocument("d1", "Title", body), max_words=100)

        assert [p.passage_id for p in passages] == ["d1#0", "d1#1", "d1#2"]
        assert [p.word_count for p in passages] == [100, 100, 50]
        assert passages[1].text.split()[0] == "w100"
        assert all(p.title == "Title" for p in passages)

    def test_exact_multiple_has_no_empty_tail(self):
        """Test that a body of exactly max_words words is one passage"""
        body = " ".join(["x"] * 100)
        passages = split_document(RawDocument("d", "", body), max_words=100)

        assert len(passages) == 1
        assert passages[0].word_count == 100

    def test_empty_body(self):
        """Test that an empty body yields no passages"""
        assert split_document(RawDocument("d", "T", "   "), max_words=10) == []

    def test_indexable_text_prefixes_title(self):
        """Test the title + space + text concatenation"""
        passage = split_document(RawDocument("d", "My Title", "some words"), max_words=5)[0]

        assert passage.indexable_text == "My Title some words"

    def test_rejects_non_positive_max_words(self):
        """Test that max_words below one is refused"""
        with pytest.raises(ValueError):
            split_document(RawDocument("d", "", "a b"), max_words=0)

    def test_chunks_concatenate_to_body_words(self):
        """Test that passages cover the body's words in order with nothing lost or repeated"""
        rng = np.random.default_rng(8)
        separators = [" ", "  ", "\t", "\n", " \r\n "]
        for trial in range(100):
            words = [f"w{int(rng.integers(0, 40))}," for _ in range(int(rng.integers(0, 60)))]
            body = "".join(w + separators[int(rng.integers(0, len(separators)))] for w in words)
            max_words = int(rng.integers(1, 15))

            passages = split_document(RawDocument("d", "T", body), max_words=max_words)

            joined = [word for p in passages for word in p.text.split(" ")]
            assert joined == split_words(body) == words, f"trial {trial}"
            assert [p.passage_id for p in passages] == [f"d#{i}" for i in range(len(passages))]
            assert all(p.word_count == max_words for p in passages[:-1])
            assert all(0 < p.word_count <= max_words for p in passages)

class TestCorpusFiles:
    """Test cases for TSV corpus reading and writing"""

    def test_header_is_skipped(self, tmp_path):
        """Test that a leading id/text/title header is not a document"""
        path = tmp_path / "corpus.tsv"
        path.write_text("id\ttext\ttitle\nd1\tbody one\tTitle One\nd2\tbody two\tTitle Two\n", encoding="utf-8")

        docs = list(load_tsv(path))

        assert [d.doc_id for d in docs] == ["d1", "d2"]
        assert docs[0].body == "body one"
        assert docs[0].title == "Title One"

    def test_malformed_line_strict(self, tmp_path):
        """Test that strict mode reports the offending line"""
        path = tmp_path / "corpus.tsv"
        path.write_text("d1\tbody\tTitle\nbroken line\n", encoding="utf-8")

        with pytest.raises(CorpusFormatError) as info:
            list(load_tsv(path, strict=True))
        assert info.value.line_number == 2

    def test_malformed_line_lenient(self, tmp_path):
        """Test that lenient mode skips malformed lines"""
        path = tmp_path / "corpus.tsv"
        path.write_text("d1\tbody\tTitle\nbroken\nd2\tmore\tT2\n", encoding="utf-8")

        docs = list(load_tsv(path, strict=False))

        assert [d.doc_id for d in docs] == ["d1", "d2"]

    def test_crlf_line_endings(self, tmp_path):
        """Test that Windows line endings do not leak into titles"""
        path = tmp_path / "corpus.tsv"
        path.write_bytes(b"d1\tbody\tTitle\r\n")

        assert list(load_tsv(path))[0].title == "Title"

    def test_written_corpus_reads_back(self, tmp_path, toy_documents):
        """Test that write_tsv output is accepted by load_tsv"""
        path = tmp_path / "corpus.tsv"

        assert write_tsv(toy_documents, path) == len(toy_documents)
        assert list(load_tsv(path)) == toy_documents

class TestPassageStore:
    """Test cases for the passage store"""

    def test_lookup(self, toy_store):
        """Test id lookup and membership"""
        assert len(toy_store) == 5
        assert "apple#0" in toy_store
        assert toy_store["apple#0"].title == "Apple Orchard"
        assert toy_store.get("missing#0") is None

    def test_cached_tokens(self, toy_store):
        """Test that token lists come from the shared tokenizer"""
        assert toy_store.title_tokens("river#0") == ["river", "thames"]
        assert toy_store.text_tokens("pear#0")[:2] == ["pear", "trees"]
        assert toy_store.text_tokens("pear#0") is toy_store.text_tokens("pear#0")

    def test_duplicate_document_ids(self):
        """Test that repeated passage ids are rejected"""
        docs = [RawDocument("d", "A", "one"), RawDocument("d", "B", "two")]

        with pytest.raises(DuplicatePassageError) as info:
            PassageStore.from_documents(docs)
        assert info.value.passage_id == "d#0"

    def test_from_tsv_respects_max_words(self, tmp_path):
        """Test that the store splits long documents on load"""
        path = tmp_path / "corpus.tsv"
        write_tsv([RawDocument("long", "T", " ".join(["w"] * 25))], path)

        store = PassageStore.from_tsv(path, max_words=10)

        assert [p.passage_id for p in store] == ["long#0", "long#1", "long#2"]
