"""Collapsed Gibbs sampling core.

The token conditional is

    p(z = k) proportional to (N_dk + alpha) * (N_kw + beta) / (N_k + V*beta)

with the token's own counts excluded. Exclusion is implemented as
decrement-sample-increment so there is a single code path for counts.
Categorical draws use one uniform variate against the cumulative sum of
the unnormalized weights; sweeps draw one block of uniforms per document,
which consumes the generator stream exactly as per-token draws would.

Everything here is deterministic given (state, seed, call order); sweep
order is document order then position order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, MiniBatch
from .stats import DocState, GlobalStats, Hyper, add_token, new_stats, remove_token

Rng = np.random.Generator


@dataclass
class BatchState:
    """DocStates aligned with one mini-batch's documents."""

    docs: list[DocState]

    @property
    def token_count(self) -> int:
        return sum(s.token_count for s in self.docs)


def _cumulative_weights(
    stats: GlobalStats, state: DocState, word: int, hyper: Hyper
) -> list[float]:
    """Cumulative unnormalized conditional weights over topics."""
    alpha = hyper.alpha
    beta = hyper.beta
    vbeta = hyper.vocab_size * beta
    rows = stats.topic_word
    totals = stats.topic_totals
    counts = state.topic_counts
    acc = 0.0
    cum = [0.0] * hyper.n_topics
    for k in range(hyper.n_topics):
        acc += (counts[k] + alpha) * (rows[k].get(word, 0.0) + beta) / (totals[k] + vbeta)
        cum[k] = acc
    return cum


def _draw_from_cumulative(cum: list[float], u: float) -> int:
    total = cum[-1]
    if not (total > 0.0 and math.isfinite(total)):
        raise RuntimeError(f"conditional weights sum to {total}; counts are corrupted")
    r = u * total
    k = 0
    while cum[k] <= r:
        k += 1
    return k


def conditional_probs(
    stats: GlobalStats,
    state: DocState,
    word: int,
    hyper: Hyper,
    exclude: int | None = None,
) -> list[float]:
    """Normalized length-K conditional topic distribution for one token.

    If exclude is given, that topic's counts for this token are removed
    before evaluating and restored afterwards.
    """
    if exclude is not None:
        remove_token(stats, state, exclude, word)
    try:
        cum = _cumulative_weights(stats, state, word, hyper)
    finally:
        if exclude is not None:
            add_token(stats, state, exclude, word)
    total = cum[-1]
    if not (total > 0.0 and math.isfinite(total)):
        raise RuntimeError(f"conditional weights sum to {total}; counts are corrupted")
    probs = [cum[0] / total]
    for k in range(1, len(cum)):
        probs.append((cum[k] - cum[k - 1]) / total)
    return probs


def resample_token(
    stats: GlobalStats, state: DocState, position: int, hyper: Hyper, rng: Rng
) -> int:
    """Resample one token's topic in place; returns the new topic."""
    word = state.doc.tokens[position]
    old = state.assignments[position]
    remove_token(stats, state, old, word)
    cum = _cumulative_weights(stats, state, word, hyper)
    new = _draw_from_cumulative(cum, rng.random())
    state.assignments[position] = new
    add_token(stats, state, new, word)
    return new


def progressive_init(
    stats: GlobalStats, batch: MiniBatch, hyper: Hyper, rng: Rng
) -> BatchState:
    """Assign every token in the batch by sampling from its conditional.

    Documents are processed in order; each token is drawn given all counts
    accumulated so far (earlier batches, earlier documents of this batch,
    earlier tokens of this document) and its counts are added immediately.
    """
    states = []
    for doc in batch.docs:
        state = DocState(doc, hyper.n_topics)
        tokens = doc.tokens
        if tokens:
            us = rng.random(len(tokens))
            for i, word in enumerate(tokens):
                cum = _cumulative_weights(stats, state, word, hyper)
                k = _draw_from_cumulative(cum, us[i])
                state.assignments.append(k)
                add_token(stats, state, k, word)
        states.append(state)
    return BatchState(states)


def sweep(stats: GlobalStats, batch_state: BatchState, hyper: Hyper, rng: Rng) -> None:
    """Resample every token in the batch once, in document/position order."""
    n_topics = hyper.n_topics
    alpha = hyper.alpha
    beta = hyper.beta
    vbeta = hyper.vocab_size * beta
    rows = stats.topic_word
    totals = stats.topic_totals
    cum = [0.0] * n_topics
    for state in batch_state.docs:
        tokens = state.doc.tokens
        if not tokens:
            continue
        assignments = state.assignments
        counts = state.topic_counts
        us = rng.random(len(tokens))
        # hot path: inlined remove / conditional / draw / add
        for i, word in enumerate(tokens):
            old = assignments[i]
            row = rows[old]
            remaining = row[word] - 1.0
            if remaining <= 0.0:
                if remaining < 0.0:
                    raise RuntimeError(
                        f"count for (topic={old}, word={word}) went negative"
                    )
                del row[word]
            else:
                row[word] = remaining
            totals[old] -= 1.0
            counts[old] -= 1
            acc = 0.0
            for k in range(n_topics):
                acc += (counts[k] + alpha) * (rows[k].get(word, 0.0) + beta) / (
                    totals[k] + vbeta
                )
                cum[k] = acc
            if not (acc > 0.0 and math.isfinite(acc)):
                raise RuntimeError(f"conditional weights sum to {acc}; counts are corrupted")
            r = us[i] * acc
            new = 0
            while cum[new] <= r:
                new += 1
            assignments[i] = new
            row = rows[new]
            row[word] = row.get(word, 0.0) + 1.0
            totals[new] += 1.0
            counts[new] += 1


def run_cgs(
    corpus: Corpus, n_iters: int, hyper: Hyper, rng: Rng
) -> tuple[GlobalStats, BatchState]:
    """Batch collapsed Gibbs sampling over the whole corpus.

    The progressive initialization pass counts as the first iteration, so
    n_iters = 1 performs initialization only and n_iters = N performs the
    initialization plus N - 1 full sweeps. Iteration counting matches the
    streaming driver, which makes the two produce identical chains when
    the stream is a single whole-corpus batch.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    stats = new_stats(hyper)
    if corpus.num_docs == 0:
        return stats, BatchState([])
    batch = MiniBatch(docs=corpus.documents, index=1)
    batch_state = progressive_init(stats, batch, hyper, rng)
    for _ in range(n_iters - 1):
        sweep(stats, batch_state, hyper, rng)
    return stats, batch_state
