"""Conditional-density-filtering baseline.

Processes one document at a time against an explicitly sampled topic-word
matrix: assign the document's tokens given the current matrix, fold the
final assignment counts into running topic-word totals, then resample
every topic row from its Dirichlet posterior. The single sampling pass
per document and the sampled (rather than averaged) topic rows are
deliberate; they are what make this a baseline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .corpus import Document, MiniBatch
from .evaluate import _draw
from .stats import DocState, Hyper, theta_vector
from .streaming import BatchReport

_MAX_UNDERFLOW_RETRIES = 8


@dataclass
class CdfState:
    """Running topic-word assignment totals and the sampled topic matrix."""

    word_counts: list[dict[int, float]]
    phi: np.ndarray

    @property
    def total_count(self) -> float:
        return sum(sum(r.values()) for r in self.word_counts)


def sample_dirichlet(concentration: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a probability vector from Dir(concentration) by gamma normalization."""
    concentration = np.asarray(concentration, dtype=float)
    if np.any(concentration <= 0.0):
        raise ValueError("Dirichlet concentration parameters must all be > 0")
    # tiny concentrations can underflow every gamma variate to exact zero
    for _ in range(_MAX_UNDERFLOW_RETRIES):
        gammas = rng.standard_gamma(concentration)
        total = gammas.sum()
        if total > 0.0:
            return gammas / total
    raise RuntimeError("Dirichlet sample underflowed repeatedly; concentrations too small")


def init_state(hyper: Hyper, rng: np.random.Generator) -> CdfState:
    """Fresh state: zero counts, topic rows drawn from the prior."""
    prior = np.full(hyper.vocab_size, hyper.beta)
    phi = np.stack([sample_dirichlet(prior, rng) for _ in range(hyper.n_topics)])
    return CdfState(word_counts=[{} for _ in range(hyper.n_topics)], phi=phi)


def cdf_process_doc(
    state: CdfState, doc: Document, hyper: Hyper, rng: np.random.Generator
) -> DocState:
    """Assign one document's tokens, absorb its counts, resample the matrix.

    Token conditional while the matrix is fixed: (N_dk + alpha) * phi[k, w].
    Assignments are initialized progressively, then resampled in one pass.
    """
    n_topics = hyper.n_topics
    alpha = hyper.alpha
    phi = state.phi
    doc_state = DocState(doc, n_topics)
    tokens = doc.tokens
    counts = np.zeros(n_topics)
    if tokens:
        us = rng.random(len(tokens))
        for i, word in enumerate(tokens):
            k = _draw((counts + alpha) * phi[:, word], us[i])
            doc_state.assignments.append(k)
            counts[k] += 1.0
        us = rng.random(len(tokens))
        for i, word in enumerate(tokens):
            counts[doc_state.assignments[i]] -= 1.0
            k = _draw((counts + alpha) * phi[:, word], us[i])
            doc_state.assignments[i] = k
            counts[k] += 1.0
        for k in range(n_topics):
            doc_state.topic_counts[k] = int(counts[k])
        doc_state.token_count = len(tokens)
        for word, k in zip(tokens, doc_state.assignments):
            row = state.word_counts[k]
            row[word] = row.get(word, 0.0) + 1.0

    beta = hyper.beta
    for k in range(n_topics):
        conc = np.full(hyper.vocab_size, beta)
        for word, count in state.word_counts[k].items():
            conc[word] += count
        state.phi[k, :] = sample_dirichlet(conc, rng)
    return doc_state


def run_cdf_lda(
    stream: Iterable[MiniBatch],
    hyper: Hyper,
    rng: np.random.Generator,
    sink: Callable[[BatchReport], None] | None = None,
    heldout_eval: Callable[[CdfState], float] | None = None,
) -> CdfState:
    """Process documents one at a time in stream order.

    Emits one report per mini-batch with the same schema as the streaming
    driver: the batch perplexity scores each document's own tokens under
    the matrix it was sampled against and its final mixture estimate.
    """
    state = init_state(hyper, rng)
    for batch in stream:
        start = time.perf_counter()
        log_lik = 0.0
        n_tokens = 0
        thetas = []
        for doc in batch.docs:
            phi_seen = state.phi.copy()
            doc_state = cdf_process_doc(state, doc, hyper, rng)
            theta = theta_vector(doc_state, hyper)
            thetas.append(theta)
            if doc.tokens:
                probs = np.asarray(theta) @ phi_seen[:, doc.tokens]
                log_lik += float(np.log(probs).sum())
                n_tokens += len(doc.tokens)
        trace = [math.exp(-log_lik / n_tokens)] if n_tokens else []
        report = BatchReport(
            batch_index=batch.index,
            iterations=1,
            train_perplexity=trace,
            wall_time_s=time.perf_counter() - start,
            tokens=batch.token_count,
            doc_thetas=thetas,
        )
        if heldout_eval is not None:
            report.heldout_perplexity = heldout_eval(state)
        if sink is not None:
            sink(report)
    return state
