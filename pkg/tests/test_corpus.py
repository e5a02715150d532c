import io

import numpy as np
import pytest

from streamlda.corpus import (
    CorpusFormatError,
    Document,
    MiniBatch,
    load_corpus,
    minibatch_stream,
    parse_docword,
    parse_uci,
    shuffle_documents,
    split_tokens_half,
    split_train_test,
    write_uci,
)


def _lines(text):
    return io.StringIO(text)


class TestParse:
    def test_basic_parse(self):
        corpus = parse_uci(_lines("2\n3\n2\n1 1 2\n2 3 1\n"), _lines("a\nb\nc\n"))
        assert corpus.num_docs == 2
        assert corpus.vocab_size == 3
        assert corpus.documents[0].tokens == [0, 0]
        assert corpus.documents[1].tokens == [2]
        assert corpus.vocab.words == ("a", "b", "c")

    def test_expansion_is_word_index_ascending(self):
        corpus = parse_docword(_lines("1\n3\n2\n1 2 1\n1 1 1\n"))
        assert corpus.documents[0].tokens == [0, 1]

    def test_word_id_out_of_range(self):
        with pytest.raises(CorpusFormatError, match="word ID 4 out of range"):
            parse_docword(_lines("1\n3\n1\n1 4 1\n"))

    def test_doc_id_out_of_range(self):
        with pytest.raises(CorpusFormatError, match="doc ID 3 out of range"):
            parse_docword(_lines("2\n3\n1\n3 1 1\n"))

    def test_count_below_one(self):
        with pytest.raises(CorpusFormatError, match="count must be >= 1"):
            parse_docword(_lines("1\n3\n1\n1 1 0\n"))

    def test_malformed_header(self):
        with pytest.raises(CorpusFormatError, match="malformed header"):
            parse_docword(_lines("two\n3\n1\n"))
        with pytest.raises(CorpusFormatError, match="missing"):
            parse_docword(_lines("2\n"))

    def test_missing_triples(self):
        with pytest.raises(CorpusFormatError, match="file ended"):
            parse_docword(_lines("1\n3\n2\n1 1 1\n"))

    def test_vocab_size_mismatch(self):
        with pytest.raises(CorpusFormatError, match="vocabulary has 2 lines"):
            parse_uci(_lines("1\n3\n1\n1 1 1\n"), _lines("a\nb\n"))

    def test_duplicate_vocab_words(self):
        with pytest.raises(CorpusFormatError, match="duplicate"):
            parse_uci(_lines("1\n2\n1\n1 1 1\n"), _lines("a\na\n"))

    def test_empty_documents_are_retained(self):
        corpus = parse_docword(_lines("3\n2\n1\n2 1 4\n"))
        assert corpus.num_docs == 3
        assert corpus.documents[0].tokens == []
        assert corpus.documents[1].tokens == [0, 0, 0, 0]
        assert corpus.documents[2].tokens == []

    def test_token_total_matches_count_fields(self):
        rng = np.random.default_rng(0)
        triples = []
        total = 0
        for i in range(50):
            d, v, c = rng.integers(1, 21), rng.integers(1, 31), int(rng.integers(1, 6))
            triples.append(f"{d} {v} {c}")
            total += c
        text = "20\n30\n50\n" + "\n".join(triples) + "\n"
        corpus = parse_docword(_lines(text))
        assert corpus.total_tokens == total


class TestRoundTrip:
    def test_write_then_parse(self, tmp_path):
        corpus = parse_uci(_lines("3\n4\n3\n1 2 2\n2 1 1\n3 4 5\n"), _lines("a\nb\nc\nd\n"))
        docword = tmp_path / "docword.txt"
        vocab = tmp_path / "vocab.txt"
        write_uci(corpus, str(docword), str(vocab))
        again = load_corpus(str(docword), str(vocab))
        assert [d.tokens for d in again.documents] == [d.tokens for d in corpus.documents]
        assert again.vocab.words == corpus.vocab.words


class TestSplit:
    def _corpus(self, n=10):
        return parse_docword(_lines(f"{n}\n5\n{n}\n" + "".join(f"{i+1} 1 2\n" for i in range(n))))

    def test_sizes(self):
        train, test = split_train_test(self._corpus(10), 0.2, seed=0)
        assert train.num_docs == 8
        assert test.num_docs == 2

    def test_deterministic(self):
        c = self._corpus(20)
        a = split_train_test(c, 0.3, seed=5)
        b = split_train_test(c, 0.3, seed=5)
        assert [d.id for d in a[0].documents] == [d.id for d in b[0].documents]
        assert [d.id for d in a[1].documents] == [d.id for d in b[1].documents]

    def test_fraction_bounds(self):
        c = self._corpus(4)
        with pytest.raises(ValueError):
            split_train_test(c, 0.0, seed=0)
        with pytest.raises(ValueError):
            split_train_test(c, 1.0, seed=0)

    def test_partition_covers_corpus(self):
        c = self._corpus(17)
        train, test = split_train_test(c, 0.4, seed=3)
        assert train.num_docs + test.num_docs == 17
        assert {d.id for d in train.documents} | {d.id for d in test.documents} == set(range(17))
        assert train.vocab_size == test.vocab_size == c.vocab_size

    def test_shuffle_is_permutation(self):
        c = self._corpus(12)
        shuffled = shuffle_documents(c, seed=1)
        assert sorted(d.id for d in shuffled.documents) == list(range(12))
        assert shuffle_documents(c, seed=1).documents == shuffled.documents


class TestMiniBatches:
    def _docs(self, n):
        return [Document(id=i, tokens=[0]) for i in range(n)]

    def test_chunking(self):
        from streamlda.corpus import Corpus

        corpus = Corpus(self._docs(10), vocab_size=1)
        batches = list(minibatch_stream(corpus, 4))
        assert [len(b.docs) for b in batches] == [4, 4, 2]
        assert [b.index for b in batches] == [1, 2, 3]

    def test_batch_larger_than_corpus(self):
        from streamlda.corpus import Corpus

        corpus = Corpus(self._docs(3), vocab_size=1)
        batches = list(minibatch_stream(corpus, 10))
        assert len(batches) == 1
        assert len(batches[0].docs) == 3

    def test_batch_size_equal_to_corpus(self):
        from streamlda.corpus import Corpus

        corpus = Corpus(self._docs(7), vocab_size=1)
        batches = list(minibatch_stream(corpus, 7))
        assert len(batches) == 1

    def test_zero_batch_size_rejected(self):
        from streamlda.corpus import Corpus

        corpus = Corpus(self._docs(3), vocab_size=1)
        with pytest.raises(ValueError):
            list(minibatch_stream(corpus, 0))

    def test_concatenation_restores_corpus(self):
        from streamlda.corpus import Corpus

        corpus = Corpus(self._docs(13), vocab_size=1)
        batches = list(minibatch_stream(corpus, 5))
        flat = [d for b in batches for d in b.docs]
        assert flat == corpus.documents

    def test_empty_minibatch_rejected(self):
        with pytest.raises(ValueError):
            MiniBatch(docs=[], index=1)


class TestHalves:
    @pytest.mark.parametrize(
        "tokens, observed, heldout",
        [
            ([5, 7, 9], [5, 7], [9]),
            ([], [], []),
            ([1, 2], [1], [2]),
            ([4], [4], []),
        ],
    )
    def test_split(self, tokens, observed, heldout):
        doc = Document(id=0, tokens=tokens)
        a, b = split_tokens_half(doc)
        assert a == observed
        assert b == heldout
        assert a + b == tokens

    def test_concatenation_property(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            tokens = rng.integers(0, 9, size=rng.integers(0, 30)).tolist()
            a, b = split_tokens_half(Document(id=0, tokens=tokens))
            assert a + b == tokens
            assert len(a) - len(b) in (0, 1)
