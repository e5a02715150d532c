"""Held-out perplexity via fold-in.

Each test document is split in half: the first ceil(L/2) tokens are used
to infer the document's topic mixture with the topic-word matrix held
fixed, and the remaining tokens are scored. The fold-in is a short Gibbs
run whose conditional is (N_dk + alpha) * phi[k, w]; the mixture estimate
is the posterior mean averaged over the last few sweeps.

Documents are evaluated independently with generators derived from
(seed, document id), so the corpus-level result does not depend on the
order of the test documents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Document, split_tokens_half
from .stats import Hyper


@dataclass(frozen=True)
class EvalConfig:
    foldin_sweeps: int = 50
    foldin_averaged_tail: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.foldin_sweeps < 1:
            raise ValueError(f"foldin_sweeps must be >= 1, got {self.foldin_sweeps}")
        if not 1 <= self.foldin_averaged_tail <= self.foldin_sweeps:
            raise ValueError(
                f"foldin_averaged_tail must be in [1, foldin_sweeps], got {self.foldin_averaged_tail}"
            )


def _draw(weights: np.ndarray, u: float) -> int:
    total = weights.sum()
    if not (total > 0.0 and math.isfinite(total)):
        raise RuntimeError(f"fold-in weights sum to {total}")
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, u * total, side="right"))
    return min(k, len(weights) - 1)


def fold_in_theta(
    phi: np.ndarray,
    observed: list[int],
    hyper: Hyper,
    config: EvalConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Infer a document's topic mixture from observed tokens, phi fixed.

    Returns the average posterior-mean mixture over the last
    `foldin_averaged_tail` sweeps; with no observed tokens, the prior mean.
    """
    n_topics = hyper.n_topics
    alpha = hyper.alpha
    if not observed:
        return np.full(n_topics, 1.0 / n_topics)
    counts = np.zeros(n_topics)
    assignments = np.empty(len(observed), dtype=np.int64)
    us = rng.random(len(observed))
    for i, word in enumerate(observed):
        k = _draw((counts + alpha) * phi[:, word], us[i])
        assignments[i] = k
        counts[k] += 1.0

    theta_sum = np.zeros(n_topics)
    burn_in = config.foldin_sweeps - config.foldin_averaged_tail
    for s in range(config.foldin_sweeps):
        us = rng.random(len(observed))
        for i, word in enumerate(observed):
            counts[assignments[i]] -= 1.0
            k = _draw((counts + alpha) * phi[:, word], us[i])
            assignments[i] = k
            counts[k] += 1.0
        if s >= burn_in:
            theta_sum += (counts + alpha) / (len(observed) + n_topics * alpha)
    return theta_sum / config.foldin_averaged_tail


def doc_log_likelihood(phi: np.ndarray, theta: np.ndarray, heldout: list[int]) -> float:
    """Sum over held-out tokens of log sum_k phi[k, w] * theta[k]."""
    if not heldout:
        return 0.0
    probs = theta @ phi[:, heldout]
    if np.any(probs <= 0.0):
        word = heldout[int(np.argmax(probs <= 0.0))]
        raise ValueError(f"held-out word {word} has zero probability under the model")
    return float(np.log(probs).sum())


def eval_report(
    phi: np.ndarray,
    test_docs: list[Document],
    hyper: Hyper,
    config: EvalConfig,
) -> tuple[list[tuple[int, int, float]], float]:
    """Per-document perplexities and the token-weighted corpus perplexity.

    Rows are (doc id, held-out token count, per-document perplexity);
    documents whose held-out half is empty are skipped.
    """
    rows = []
    total_ll = 0.0
    total_tokens = 0
    for doc in test_docs:
        observed, heldout = split_tokens_half(doc)
        if not heldout:
            continue
        rng = np.random.default_rng((config.seed, doc.id))
        theta = fold_in_theta(phi, observed, hyper, config, rng)
        ll = doc_log_likelihood(phi, theta, heldout)
        rows.append((doc.id, len(heldout), math.exp(-ll / len(heldout))))
        total_ll += ll
        total_tokens += len(heldout)
    if total_tokens == 0:
        raise ValueError("no held-out tokens: every test document is too short")
    return rows, math.exp(-total_ll / total_tokens)


def corpus_perplexity(
    phi: np.ndarray,
    test_docs: list[Document],
    hyper: Hyper,
    config: EvalConfig,
) -> float:
    """Token-weighted held-out perplexity over a list of test documents."""
    _, perplexity = eval_report(phi, test_docs, hyper, config)
    return perplexity
