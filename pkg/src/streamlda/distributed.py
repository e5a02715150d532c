"""Asynchronous count server and workers.

The server owns the global topic-word counts. Workers fetch a snapshot,
run the streaming sampler locally against the copy without decay, and
push back the sparse difference; the server folds each push in as
decay * (counts + delta) under an exclusive section, so pushes land in a
total order and replaying the logged pushes serially reproduces the final
counts bit for bit. Snapshot reads share a readers-writer lock with the
merges, so a snapshot always reflects a prefix of that order. Workers
never talk to each other.

A worker's push is acknowledged before its next fetch, so every worker
observes its own previous update.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from .corpus import MiniBatch
from .sampler import Rng
from .stats import GlobalStats, Hyper, SparseDelta, delta_between, merge_delta, new_stats
from .streaming import BatchReport, StreamConfig, process_minibatch
from .wire import (
    Ack,
    Fetch,
    ProtocolError,
    Push,
    Snapshot,
    recv_message,
    send_message,
)

log = logging.getLogger(__name__)


class _ReadWriteLock:
    """Writer-preferring readers-writer lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._readers_done = threading.Condition(self._lock)
        self._writers_done = threading.Condition(self._lock)
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self):
        with self._lock:
            while self._writer or self._writers_waiting:
                self._writers_done.wait()
            self._readers += 1

    def release_read(self):
        with self._lock:
            self._readers -= 1
            if self._readers == 0:
                self._readers_done.notify_all()

    def acquire_write(self):
        with self._lock:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._readers_done.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._lock:
            self._writer = False
            self._readers_done.notify_all()
            self._writers_done.notify_all()


class CountServer:
    """Serves the global count matrix over the framed wire protocol."""

    def __init__(self, hyper: Hyper, decay: float, bind: tuple[str, int] = ("127.0.0.1", 0)):
        if not 0.0 < decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {decay}")
        self.hyper = hyper
        self.decay = decay
        self.stats = new_stats(hyper)
        self.push_log: list[SparseDelta] = []
        self.merge_count = 0
        self._rw = _ReadWriteLock()
        self._listener = socket.create_server(bind)
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    def start(self) -> "CountServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conns_lock:
            for conn in list(self._conns):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                conn.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self) -> "CountServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, peer = self._listener.accept()
            except OSError:
                return
            with self._conns_lock:
                self._conns.add(conn)
            t = threading.Thread(target=self._serve_conn, args=(conn, peer), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket, peer) -> None:
        try:
            while True:
                try:
                    msg = recv_message(conn)
                except ProtocolError as exc:
                    log.error("closing %s: %s", peer, exc)
                    return
                if msg is None:
                    return
                if isinstance(msg, Fetch):
                    send_message(conn, self._snapshot_message())
                elif isinstance(msg, Push):
                    send_message(conn, Ack(applied=self._apply_push(msg)))
                else:
                    log.error("closing %s: unexpected %s", peer, type(msg).__name__)
                    return
        except OSError:
            pass
        finally:
            with self._conns_lock:
                self._conns.discard(conn)
            conn.close()

    def _snapshot_message(self) -> Snapshot:
        self._rw.acquire_read()
        try:
            entries = []
            for k, row in enumerate(self.stats.topic_word):
                for v, count in row.items():
                    entries.append((k, v, count))
        finally:
            self._rw.release_read()
        return Snapshot(
            n_topics=self.hyper.n_topics,
            vocab_size=self.hyper.vocab_size,
            decay=self.decay,
            entries=tuple(entries),
        )

    def _apply_push(self, msg: Push) -> bool:
        n_topics = self.hyper.n_topics
        vocab_size = self.hyper.vocab_size
        for k, v, _ in msg.entries:
            if not (0 <= k < n_topics and 0 <= v < vocab_size):
                log.error("rejecting push: entry (%d, %d) out of range", k, v)
                return False
        self._rw.acquire_write()
        try:
            # reject pushes that would drive any cell negative before mutating,
            # so an applied push can never leave the matrix half-merged
            pending: dict[tuple[int, int], float] = {}
            for k, v, d in msg.entries:
                pending[(k, v)] = pending.get((k, v), 0.0) + d
            for (k, v), d in pending.items():
                if self.stats.topic_word[k].get(v, 0.0) + d < -1e-9:
                    log.error("rejecting push: cell (%d, %d) would go negative", k, v)
                    return False
            delta = SparseDelta(list(msg.entries))
            merge_delta(self.stats, delta, self.decay)
            self.push_log.append(delta)
            self.merge_count += 1
            return True
        finally:
            self._rw.release_write()


def serve(
    bind: tuple[str, int], hyper: Hyper, decay: float
) -> CountServer:
    """Start a count server; returns the running server."""
    return CountServer(hyper, decay, bind).start()


def replay_pushes(hyper: Hyper, decay: float, push_log: Iterable[SparseDelta]) -> GlobalStats:
    """Re-apply a logged push sequence serially from empty counts."""
    stats = new_stats(hyper)
    for delta in push_log:
        merge_delta(stats, delta, decay)
    return stats


class ServerClient:
    """Worker-side connection to a count server."""

    def __init__(self, address: tuple[str, int], timeout: float = 60.0):
        self.address = address
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def connect(self) -> None:
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def fetch(self) -> Snapshot:
        self.connect()
        send_message(self._sock, Fetch())
        msg = recv_message(self._sock)
        if not isinstance(msg, Snapshot):
            raise ProtocolError(f"expected SNAPSHOT, got {type(msg).__name__}")
        return msg

    def push(self, delta: SparseDelta) -> bool:
        self.connect()
        send_message(self._sock, Push(entries=tuple(delta.entries)))
        msg = recv_message(self._sock)
        if not isinstance(msg, Ack):
            raise ProtocolError(f"expected ACK, got {type(msg).__name__}")
        return msg.applied


def _stats_from_snapshot(snap: Snapshot) -> GlobalStats:
    stats = GlobalStats(snap.n_topics, snap.vocab_size)
    for k, v, count in snap.entries:
        stats.topic_word[k][v] = count
        stats.topic_totals[k] += count
    return stats


def worker_run(
    server_address: tuple[str, int],
    stream: Iterable[MiniBatch],
    config: StreamConfig,
    rng: Rng,
    sink: Callable[[BatchReport], None] | None = None,
    retry_attempts: int = 3,
    backoff_s: float = 0.5,
) -> None:
    """Process a local stream of batches against a remote count server.

    Per batch: fetch a snapshot, run the streaming sampler on a local copy
    with no local decay (the decay is the server's job, applied per push),
    push the sparse difference, and wait for the acknowledgement. A lost
    connection retries the whole exchange with exponential backoff; after
    retry_attempts failures the batch is abandoned with an error report.
    """
    client = ServerClient(server_address)
    local_config = replace(config, decay=1.0)
    try:
        for batch in stream:
            report = None
            for attempt in range(retry_attempts):
                try:
                    snap = client.fetch()
                    if (snap.n_topics, snap.vocab_size) != (
                        config.hyper.n_topics,
                        config.hyper.vocab_size,
                    ):
                        raise RuntimeError(
                            f"server model is K={snap.n_topics}, V={snap.vocab_size}; "
                            f"worker configured for K={config.hyper.n_topics}, "
                            f"V={config.hyper.vocab_size}"
                        )
                    base = _stats_from_snapshot(snap)
                    local = _stats_from_snapshot(snap)
                    report = process_minibatch(local, batch, local_config, rng)
                    applied = client.push(delta_between(base, local))
                    if not applied:
                        raise RuntimeError("server rejected the push")
                    break
                except (OSError, ProtocolError) as exc:
                    client.close()
                    log.warning(
                        "batch %d attempt %d failed: %s", batch.index, attempt + 1, exc
                    )
                    if attempt + 1 < retry_attempts:
                        time.sleep(backoff_s * (2**attempt))
            else:
                report = BatchReport(
                    batch_index=batch.index,
                    iterations=0,
                    train_perplexity=[],
                    wall_time_s=0.0,
                    tokens=batch.token_count,
                    error=f"abandoned after {retry_attempts} attempts",
                )
            if sink is not None:
                sink(report)
    finally:
        client.close()
