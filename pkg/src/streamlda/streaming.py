"""Streaming Gibbs driver: per-batch iteration with decay and early stopping.

Each arriving mini-batch is initialized progressively (that pass counts as
iteration 1), then swept until the batch's own training perplexity stops
improving for `patience` consecutive iterations or `max_iters` is reached.
After the iteration loop the accumulated topic-word counts are decayed
once. Assignments of earlier batches are never revisited; per-batch
document states are dropped after the report, so memory is bounded by the
current batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .corpus import MiniBatch
from .sampler import BatchState, Rng, progressive_init, sweep
from .stats import GlobalStats, Hyper, apply_decay, new_stats, theta_vector

# a perplexity must beat the best by this relative margin to count as improvement
REL_IMPROVEMENT = 1e-6


@dataclass(frozen=True)
class StreamConfig:
    hyper: Hyper
    batch_size: int
    decay: float = 1.0
    max_iters: int = 400
    patience: int | None = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1 or None, got {self.patience}")


@dataclass
class BatchReport:
    """Outcome of processing one mini-batch."""

    batch_index: int
    iterations: int
    train_perplexity: list[float]
    wall_time_s: float
    tokens: int
    doc_thetas: list[list[float]] = field(default_factory=list)
    heldout_perplexity: float | None = None
    error: str | None = None

    @property
    def final_train_perplexity(self) -> float | None:
        return self.train_perplexity[-1] if self.train_perplexity else None

    @property
    def tokens_per_s(self) -> float:
        return self.tokens / self.wall_time_s if self.wall_time_s > 0 else 0.0


class ConvergenceRule:
    """Early stopping on a perplexity trace.

    Stop when `patience` consecutive values fail to improve the running
    best by a relative margin, or when `max_iters` values have been seen.
    patience=None disables the patience branch (fixed iteration count).
    """

    def __init__(self, patience: int | None, max_iters: int, rel_tol: float = REL_IMPROVEMENT):
        if max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {max_iters}")
        if patience is not None and patience < 1:
            raise ValueError(f"patience must be >= 1 or None, got {patience}")
        self.patience = patience
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.best = float("inf")
        self.stale = 0
        self.iterations = 0

    def update(self, value: float) -> bool:
        """Record one iteration's perplexity; returns True when it is time to stop."""
        self.iterations += 1
        if value < self.best * (1.0 - self.rel_tol):
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        if self.patience is not None and self.stale >= self.patience:
            return True
        return self.iterations >= self.max_iters


def train_perplexity(stats: GlobalStats, batch_state: BatchState, hyper: Hyper) -> float:
    """Perplexity of the batch's own tokens under the current posterior means."""
    alpha = hyper.alpha
    beta = hyper.beta
    n_topics = hyper.n_topics
    vbeta = hyper.vocab_size * beta
    rows = stats.topic_word
    inv_totals = [1.0 / (stats.topic_totals[k] + vbeta) for k in range(n_topics)]
    log_lik = 0.0
    n_tokens = 0
    for state in batch_state.docs:
        tokens = state.doc.tokens
        if not tokens:
            continue
        denom = state.token_count + n_topics * alpha
        theta = [(c + alpha) / denom for c in state.topic_counts]
        for word in tokens:
            p = 0.0
            for k in range(n_topics):
                p += theta[k] * (rows[k].get(word, 0.0) + beta) * inv_totals[k]
            log_lik += math.log(p)
        n_tokens += len(tokens)
    if n_tokens == 0:
        raise ValueError("cannot compute training perplexity of an empty batch")
    return math.exp(-log_lik / n_tokens)


def process_minibatch(
    stats: GlobalStats, batch: MiniBatch, config: StreamConfig, rng: Rng
) -> BatchReport:
    """Run one mini-batch to convergence and decay the global counts."""
    start = time.perf_counter()
    hyper = config.hyper
    batch_state = progressive_init(stats, batch, hyper, rng)
    trace = [train_perplexity(stats, batch_state, hyper)]
    rule = ConvergenceRule(config.patience, config.max_iters)
    stop = rule.update(trace[0])
    while not stop:
        sweep(stats, batch_state, hyper, rng)
        trace.append(train_perplexity(stats, batch_state, hyper))
        stop = rule.update(trace[-1])
    thetas = [theta_vector(s, hyper) for s in batch_state.docs]
    apply_decay(stats, config.decay)
    return BatchReport(
        batch_index=batch.index,
        iterations=len(trace),
        train_perplexity=trace,
        wall_time_s=time.perf_counter() - start,
        tokens=batch.token_count,
        doc_thetas=thetas,
    )


def run_sgs(
    stream: Iterable[MiniBatch],
    config: StreamConfig,
    rng: Rng,
    sink: Callable[[BatchReport], None] | None = None,
    heldout_eval: Callable[[GlobalStats], float] | None = None,
) -> GlobalStats:
    """Process a stream of mini-batches, emitting one report per batch.

    heldout_eval, when given, is called with the post-decay stats after
    each batch and its value is attached to the report.
    """
    stats = new_stats(config.hyper)
    for batch in stream:
        report = process_minibatch(stats, batch, config, rng)
        if heldout_eval is not None:
            report.heldout_perplexity = heldout_eval(stats)
        if sink is not None:
            sink(report)
    return stats
