"""Sufficient statistics of the collapsed topic model representation.

GlobalStats keeps the topic-word count matrix sparse (one dict per topic
row) plus dense per-topic totals. Counts are real-valued because decaying
the accumulated history produces fractional counts; during an undecayed
run every count stays an exact small integer, which is what makes the
bitwise-equality contracts between the batch and streaming drivers hold.

Entries that decay below PRUNE_EPS are dropped and their mass is removed
from the topic totals, so the row-sum invariant (totals[k] equals the sum
of row k within 1e-9 relative) survives arbitrarily long decay chains.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document

PRUNE_EPS = 1e-10
# additive merges may drive a cell slightly negative; beyond this it is a bug
MERGE_CLAMP = 1e-9

_LIVE_DOCSTATES: "weakref.WeakSet[DocState]" = weakref.WeakSet()


def live_docstate_count() -> int:
    """Number of DocState objects currently alive (constant-memory hook)."""
    return len(_LIVE_DOCSTATES)


@dataclass(frozen=True)
class Hyper:
    """Symmetric Dirichlet hyperparameters and model dimensions."""

    alpha: float
    beta: float
    n_topics: int
    vocab_size: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.n_topics < 1:
            raise ValueError(f"n_topics must be >= 1, got {self.n_topics}")
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")


class GlobalStats:
    """Sparse topic-word counts with dense per-topic totals."""

    __slots__ = ("n_topics", "vocab_size", "topic_word", "topic_totals")

    def __init__(self, n_topics: int, vocab_size: int):
        self.n_topics = n_topics
        self.vocab_size = vocab_size
        self.topic_word: list[dict[int, float]] = [{} for _ in range(n_topics)]
        self.topic_totals: list[float] = [0.0] * n_topics

    def __eq__(self, other) -> bool:
        if not isinstance(other, GlobalStats):
            return NotImplemented
        return (
            self.n_topics == other.n_topics
            and self.vocab_size == other.vocab_size
            and self.topic_totals == other.topic_totals
            and self.topic_word == other.topic_word
        )

    def __repr__(self) -> str:
        stored = sum(len(r) for r in self.topic_word)
        return f"GlobalStats(K={self.n_topics}, V={self.vocab_size}, stored={stored})"

    @property
    def total_count(self) -> float:
        return sum(self.topic_totals)


class DocState:
    """Per-document topic assignments and topic counts."""

    __slots__ = ("doc", "assignments", "topic_counts", "token_count", "__weakref__")

    def __init__(self, doc: Document, n_topics: int):
        self.doc = doc
        self.assignments: list[int] = []
        self.topic_counts: list[int] = [0] * n_topics
        self.token_count: int = 0
        _LIVE_DOCSTATES.add(self)


@dataclass
class SparseDelta:
    """Sparse difference of two count matrices: (topic, word, delta) triples."""

    entries: list[tuple[int, int, float]] = field(default_factory=list)

    def total(self) -> float:
        return sum(e[2] for e in self.entries)


def new_stats(hyper: Hyper) -> GlobalStats:
    return GlobalStats(hyper.n_topics, hyper.vocab_size)


def add_token(stats: GlobalStats, state: DocState, topic: int, word: int) -> None:
    row = stats.topic_word[topic]
    row[word] = row.get(word, 0.0) + 1.0
    stats.topic_totals[topic] += 1.0
    state.topic_counts[topic] += 1
    state.token_count += 1


def remove_token(stats: GlobalStats, state: DocState, topic: int, word: int) -> None:
    row = stats.topic_word[topic]
    current = row.get(word, 0.0)
    if current < 1.0 or state.topic_counts[topic] < 1:
        raise RuntimeError(
            f"removing token (topic={topic}, word={word}) would drive a count below zero"
        )
    remaining = current - 1.0
    if remaining <= 0.0:
        del row[word]
    else:
        row[word] = remaining
    stats.topic_totals[topic] -= 1.0
    state.topic_counts[topic] -= 1
    state.token_count -= 1


def apply_decay(stats: GlobalStats, decay: float, prune_eps: float = PRUNE_EPS) -> None:
    """Scale every stored count and total by decay, pruning dead entries.

    Pruned mass is subtracted from the topic totals so the row-sum
    invariant is preserved. decay=1 is an exact no-op.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    if decay == 1.0:
        return
    for k, row in enumerate(stats.topic_word):
        pruned = 0.0
        dead = []
        for v, count in row.items():
            scaled = count * decay
            if scaled < prune_eps:
                dead.append(v)
                pruned += scaled
            else:
                row[v] = scaled
        for v in dead:
            del row[v]
        stats.topic_totals[k] = stats.topic_totals[k] * decay - pruned


def phi_mean(stats: GlobalStats, hyper: Hyper, topic: int, word: int) -> float:
    """Posterior-mean probability of word under topic."""
    return (stats.topic_word[topic].get(word, 0.0) + hyper.beta) / (
        stats.topic_totals[topic] + hyper.vocab_size * hyper.beta
    )


def theta_mean(state: DocState, hyper: Hyper, topic: int) -> float:
    """Posterior-mean weight of topic in the document."""
    return (state.topic_counts[topic] + hyper.alpha) / (
        state.token_count + hyper.n_topics * hyper.alpha
    )


def phi_matrix(stats: GlobalStats, hyper: Hyper) -> np.ndarray:
    """Dense K x V posterior-mean topic-word matrix."""
    beta = hyper.beta
    out = np.empty((stats.n_topics, stats.vocab_size))
    for k, row in enumerate(stats.topic_word):
        denom = stats.topic_totals[k] + stats.vocab_size * beta
        out[k, :] = beta / denom
        for v, count in row.items():
            out[k, v] = (count + beta) / denom
    return out


def theta_vector(state: DocState, hyper: Hyper) -> list[float]:
    denom = state.token_count + hyper.n_topics * hyper.alpha
    return [(c + hyper.alpha) / denom for c in state.topic_counts]


def snapshot(stats: GlobalStats) -> GlobalStats:
    """Deep, independent copy."""
    copy = GlobalStats(stats.n_topics, stats.vocab_size)
    copy.topic_word = [dict(row) for row in stats.topic_word]
    copy.topic_totals = list(stats.topic_totals)
    return copy


def delta_between(before: GlobalStats, after: GlobalStats) -> SparseDelta:
    """Sparse entrywise difference after - before."""
    if (before.n_topics, before.vocab_size) != (after.n_topics, after.vocab_size):
        raise ValueError(
            f"dimension mismatch: ({before.n_topics}, {before.vocab_size}) vs "
            f"({after.n_topics}, {after.vocab_size})"
        )
    entries: list[tuple[int, int, float]] = []
    for k in range(before.n_topics):
        b = before.topic_word[k]
        a = after.topic_word[k]
        for v, bval in b.items():
            diff = a.get(v, 0.0) - bval
            if diff != 0.0:
                entries.append((k, v, diff))
        for v, aval in a.items():
            if v not in b:
                entries.append((k, v, aval))
    return SparseDelta(entries)


def merge_delta(
    stats: GlobalStats, delta: SparseDelta, decay: float, prune_eps: float = PRUNE_EPS
) -> None:
    """Add a sparse delta entrywise, then decay the whole matrix.

    Cells driven below zero by no more than MERGE_CLAMP are clamped to
    zero (and removed); anything more negative is a logic error.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    for k, v, d in delta.entries:
        if not (0 <= k < stats.n_topics and 0 <= v < stats.vocab_size):
            raise ValueError(f"delta entry ({k}, {v}) out of range for K={stats.n_topics}, V={stats.vocab_size}")
        row = stats.topic_word[k]
        old = row.get(v, 0.0)
        new = old + d
        if new < -MERGE_CLAMP:
            raise RuntimeError(f"merge drives cell ({k}, {v}) to {new}, below -{MERGE_CLAMP}")
        if new < prune_eps:
            if v in row:
                del row[v]
            new = 0.0
        else:
            row[v] = new
        stats.topic_totals[k] += new - old
    apply_decay(stats, decay, prune_eps)


def check_row_sums(stats: GlobalStats, rel_tol: float = 1e-9) -> None:
    """Raise if any topic total drifts from its row sum beyond rel_tol."""
    for k, row in enumerate(stats.topic_word):
        total = stats.topic_totals[k]
        row_sum = math.fsum(row.values())
        if abs(total - row_sum) > rel_tol * max(1.0, abs(total)):
            raise RuntimeError(f"row {k}: total {total} != row sum {row_sum}")


def save_checkpoint(stats: GlobalStats, hyper: Hyper, path: str) -> None:
    """Write the model as a text checkpoint.

    Line 1: "K V alpha beta"; then one "topic word count" triple per line
    in topic-major order. Floats use repr so reloads are bitwise.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{hyper.n_topics} {hyper.vocab_size} {hyper.alpha!r} {hyper.beta!r}\n")
        for k, row in enumerate(stats.topic_word):
            for v in sorted(row):
                f.write(f"{k} {v} {row[v]!r}\n")


def load_checkpoint(path: str) -> tuple[GlobalStats, Hyper]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 4:
            raise ValueError(f"checkpoint {path}: header must be 'K V alpha beta'")
        try:
            n_topics, vocab_size = int(header[0]), int(header[1])
            alpha, beta = float(header[2]), float(header[3])
        except ValueError:
            raise ValueError(f"checkpoint {path}: malformed header {header}") from None
        hyper = Hyper(alpha=alpha, beta=beta, n_topics=n_topics, vocab_size=vocab_size)
        stats = new_stats(hyper)
        for line in f:
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"checkpoint {path}: malformed triple {line!r}")
            k, v, count = int(parts[0]), int(parts[1]), float(parts[2])
            if not (0 <= k < n_topics and 0 <= v < vocab_size):
                raise ValueError(f"checkpoint {path}: triple ({k}, {v}) out of range")
            stats.topic_word[k][v] = count
            stats.topic_totals[k] += count
    return stats, hyper
