"""Synthetic corpora drawn from the topic-model generative process.

Topic rows come from a symmetric Dirichlet(beta), per-document mixtures
from Dirichlet(alpha); each token picks a topic from its document mixture
and a word from that topic. An optional drift point re-draws the topic
rows partway through the corpus, for experiments where the word
distribution moves under a stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Document, Vocabulary


@dataclass(frozen=True)
class GenSpec:
    n_docs: int
    n_topics: int
    vocab_size: int
    alpha: float = 0.1
    beta: float = 0.03
    doc_length: int | None = None
    poisson_mean: float | None = None
    seed: int = 0
    drift_after_doc: int | None = None

    def __post_init__(self):
        if min(self.n_docs, self.n_topics, self.vocab_size) < 1:
            raise ValueError("n_docs, n_topics and vocab_size must all be >= 1")
        if (self.doc_length is None) == (self.poisson_mean is None):
            raise ValueError("specify exactly one of doc_length or poisson_mean")
        if self.doc_length is not None and self.doc_length < 0:
            raise ValueError(f"doc_length must be >= 0, got {self.doc_length}")
        if self.poisson_mean is not None and self.poisson_mean <= 0:
            raise ValueError(f"poisson_mean must be > 0, got {self.poisson_mean}")
        if self.drift_after_doc is not None and not 0 < self.drift_after_doc < self.n_docs:
            raise ValueError("drift_after_doc must fall strictly inside the corpus")


@dataclass
class SynthResult:
    corpus: Corpus
    phi: np.ndarray
    theta: np.ndarray
    drift_phi: np.ndarray | None = None

    def phi_at(self, doc_index: int, spec: GenSpec) -> np.ndarray:
        if spec.drift_after_doc is not None and doc_index >= spec.drift_after_doc:
            return self.drift_phi
        return self.phi


def _multinomial_tokens(cum: np.ndarray, us: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cum, us, side="right")
    return np.minimum(idx, len(cum) - 1)


def generate(spec: GenSpec) -> SynthResult:
    """Forward-sample a corpus; ground-truth matrices are retained."""
    rng = np.random.default_rng(spec.seed)
    phi = rng.dirichlet(np.full(spec.vocab_size, spec.beta), size=spec.n_topics)
    drift_phi = None
    if spec.drift_after_doc is not None:
        drift_phi = rng.dirichlet(np.full(spec.vocab_size, spec.beta), size=spec.n_topics)
    theta = rng.dirichlet(np.full(spec.n_topics, spec.alpha), size=spec.n_docs)

    if spec.doc_length is not None:
        lengths = np.full(spec.n_docs, spec.doc_length, dtype=np.int64)
    else:
        lengths = rng.poisson(spec.poisson_mean, size=spec.n_docs)

    phi_cum = np.cumsum(phi, axis=1)
    drift_cum = np.cumsum(drift_phi, axis=1) if drift_phi is not None else None
    theta_cum = np.cumsum(theta, axis=1)

    documents = []
    for d in range(spec.n_docs):
        length = int(lengths[d])
        if length == 0:
            documents.append(Document(id=d, tokens=[]))
            continue
        rows = phi_cum
        if drift_cum is not None and d >= spec.drift_after_doc:
            rows = drift_cum
        topics = _multinomial_tokens(theta_cum[d], rng.random(length))
        tokens = np.empty(length, dtype=np.int64)
        for k in np.unique(topics):
            mask = topics == k
            tokens[mask] = _multinomial_tokens(rows[k], rng.random(int(mask.sum())))
        documents.append(Document(id=d, tokens=tokens.tolist()))

    vocab = Vocabulary(tuple(f"w{i:05d}" for i in range(spec.vocab_size)))
    corpus = Corpus(documents, spec.vocab_size, vocab)
    return SynthResult(corpus=corpus, phi=phi, theta=theta, drift_phi=drift_phi)
