"""UCI bag-of-words corpora: parsing, splits, and mini-batch streaming.

The on-disk format is the one distributed by the UCI repository: a docword
file whose first three lines give the document count D, the vocabulary size
V and the number of triple lines that follow, then one "docID wordID count"
triple per line with 1-based IDs; and a vocabulary file with one UTF-8 word
per line, line n naming word ID n.

Documents are stored as token sequences (the multiset expansion of the
count records, in ascending word-index order so runs are reproducible).
Documents absent from the triple list are kept as empty documents, which
preserves the declared document count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class CorpusFormatError(ValueError):
    """A bag-of-words or vocabulary file violates the expected format."""


@dataclass(frozen=True)
class Vocabulary:
    """Dense 0-based word index <-> word string mapping."""

    words: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise CorpusFormatError("vocabulary contains duplicate words")

    @property
    def size(self) -> int:
        return len(self.words)


@dataclass
class Document:
    """A bag-of-words document expanded to a token (word index) sequence."""

    id: int
    tokens: list[int]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Corpus:
    documents: list[Document]
    vocab_size: int
    vocab: Vocabulary | None = None

    @property
    def num_docs(self) -> int:
        return len(self.documents)

    @property
    def total_tokens(self) -> int:
        return sum(len(d.tokens) for d in self.documents)


@dataclass(frozen=True)
class MiniBatch:
    """A contiguous group of documents treated as one arrival unit.

    ``index`` is the 1-based arrival order of the batch in its stream.
    """

    docs: list[Document] = field()
    index: int = 1

    def __post_init__(self):
        if not self.docs:
            raise ValueError("mini-batch must contain at least one document")

    @property
    def token_count(self) -> int:
        return sum(len(d.tokens) for d in self.docs)


def _read_header_int(lines: Iterator[str], name: str) -> int:
    try:
        raw = next(lines)
    except StopIteration:
        raise CorpusFormatError(f"malformed header: missing {name} line") from None
    try:
        value = int(raw.strip())
    except ValueError:
        raise CorpusFormatError(f"malformed header: {name} line {raw!r} is not an integer") from None
    if value < 0:
        raise CorpusFormatError(f"malformed header: {name} must be non-negative, got {value}")
    return value


def parse_docword(docword: Iterable[str]) -> Corpus:
    """Parse a docword stream (an iterable of lines) into a Corpus.

    The vocabulary size is taken from the header; word strings are not
    attached (see parse_uci for that).
    """
    lines = iter(docword)
    num_docs = _read_header_int(lines, "D")
    vocab_size = _read_header_int(lines, "V")
    nnz = _read_header_int(lines, "NNZ")

    counts: list[dict[int, int]] = [{} for _ in range(num_docs)]
    for i in range(nnz):
        try:
            raw = next(lines)
        except StopIteration:
            raise CorpusFormatError(f"expected {nnz} triples, file ended after {i}") from None
        parts = raw.split()
        if len(parts) != 3:
            raise CorpusFormatError(f"triple {i + 1}: expected 'docID wordID count', got {raw!r}")
        try:
            doc_id, word_id, count = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise CorpusFormatError(f"triple {i + 1}: non-integer field in {raw!r}") from None
        if not 1 <= doc_id <= num_docs:
            raise CorpusFormatError(f"triple {i + 1}: doc ID {doc_id} out of range [1, {num_docs}]")
        if not 1 <= word_id <= vocab_size:
            raise CorpusFormatError(f"triple {i + 1}: word ID {word_id} out of range [1, {vocab_size}]")
        if count < 1:
            raise CorpusFormatError(f"triple {i + 1}: count must be >= 1, got {count}")
        cell = counts[doc_id - 1]
        cell[word_id - 1] = cell.get(word_id - 1, 0) + count
    for raw in lines:
        if raw.strip():
            raise CorpusFormatError(f"unexpected data after {nnz} declared triples: {raw!r}")

    documents = []
    for doc_id, cell in enumerate(counts):
        tokens: list[int] = []
        for word in sorted(cell):
            tokens.extend([word] * cell[word])
        documents.append(Document(id=doc_id, tokens=tokens))
    return Corpus(documents=documents, vocab_size=vocab_size)


def parse_uci(docword: Iterable[str], vocab: Iterable[str]) -> Corpus:
    """Parse paired docword and vocabulary streams into a Corpus."""
    corpus = parse_docword(docword)
    words = []
    for raw in vocab:
        word = raw.rstrip("\n").rstrip("\r")
        words.append(word)
    while words and words[-1] == "":
        words.pop()
    if len(words) != corpus.vocab_size:
        raise CorpusFormatError(
            f"vocabulary has {len(words)} lines, docword header declares {corpus.vocab_size}"
        )
    if any(w == "" for w in words):
        raise CorpusFormatError("vocabulary contains an empty line")
    corpus.vocab = Vocabulary(tuple(words))
    return corpus


def load_corpus(docword_path: str, vocab_path: str | None = None) -> Corpus:
    """Load a corpus from file paths; the vocabulary file is optional."""
    with open(docword_path, "r", encoding="utf-8") as f:
        if vocab_path is None:
            return parse_docword(f)
        with open(vocab_path, "r", encoding="utf-8") as g:
            return parse_uci(f, g)


def write_uci(corpus: Corpus, docword_path: str, vocab_path: str | None = None) -> None:
    """Write a corpus in UCI bag-of-words format (1-based IDs)."""
    triples = []
    for doc in corpus.documents:
        cell: dict[int, int] = {}
        for v in doc.tokens:
            cell[v] = cell.get(v, 0) + 1
        for v in sorted(cell):
            triples.append((doc.id + 1, v + 1, cell[v]))
    with open(docword_path, "w", encoding="utf-8") as f:
        f.write(f"{corpus.num_docs}\n{corpus.vocab_size}\n{len(triples)}\n")
        for d, v, c in triples:
            f.write(f"{d} {v} {c}\n")
    if vocab_path is not None:
        if corpus.vocab is not None:
            words = corpus.vocab.words
        else:
            words = tuple(f"w{i}" for i in range(corpus.vocab_size))
        with open(vocab_path, "w", encoding="utf-8") as f:
            for w in words:
                f.write(w + "\n")


def split_train_test(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Document-level train/test split, deterministic for a given seed.

    The test set receives floor(D * test_fraction) documents chosen by a
    seeded shuffle; both halves keep the original document order and share
    the vocabulary.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    num_docs = corpus.num_docs
    n_test = math.floor(num_docs * test_fraction)
    perm = np.random.default_rng(seed).permutation(num_docs)
    test_ids = set(int(i) for i in perm[:n_test])
    train_docs = [d for i, d in enumerate(corpus.documents) if i not in test_ids]
    test_docs = [d for i, d in enumerate(corpus.documents) if i in test_ids]
    train = Corpus(train_docs, corpus.vocab_size, corpus.vocab)
    test = Corpus(test_docs, corpus.vocab_size, corpus.vocab)
    return train, test


def shuffle_documents(corpus: Corpus, seed: int) -> Corpus:
    """Return a corpus with the documents in seeded-shuffled order."""
    perm = np.random.default_rng(seed).permutation(corpus.num_docs)
    docs = [corpus.documents[int(i)] for i in perm]
    return Corpus(docs, corpus.vocab_size, corpus.vocab)


def minibatch_stream(corpus: Corpus, batch_size: int) -> Iterator[MiniBatch]:
    """Yield the corpus as ordered mini-batches of batch_size documents.

    The last batch may be smaller; batch indices run 1, 2, ...
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    for t, start in enumerate(range(0, corpus.num_docs, batch_size), start=1):
        yield MiniBatch(docs=corpus.documents[start : start + batch_size], index=t)


def split_tokens_half(doc: Document) -> tuple[list[int], list[int]]:
    """Split a document's tokens into (first ceil(L/2), remainder)."""
    cut = (len(doc.tokens) + 1) // 2
    return doc.tokens[:cut], doc.tokens[cut:]
