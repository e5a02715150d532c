"""Command-line surface.

Commands: train-cgs, train-sgs, train-cdf, eval, serve, worker, bench.
Every run writes a manifest (command, resolved flags, corpus fingerprint,
timestamps) sufficient to reproduce it; metrics go out as CSV and
line-delimited JSON. Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import multiprocessing
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .cdf import run_cdf_lda
from .corpus import (
    Corpus,
    CorpusFormatError,
    load_corpus,
    minibatch_stream,
    shuffle_documents,
    split_train_test,
)
from .distributed import CountServer, worker_run
from .evaluate import EvalConfig, eval_report
from .sampler import run_cgs
from .stats import Hyper, load_checkpoint, phi_matrix, save_checkpoint
from .streaming import BatchReport, StreamConfig, run_sgs, train_perplexity
from .synth import GenSpec, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

METRICS_FIELDS = [
    "batch",
    "iterations",
    "train_perplexity",
    "heldout_perplexity",
    "wall_ms",
    "tokens",
    "tokens_per_s",
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ratio(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return value


def _decay(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text}")
    return value


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


@dataclass
class RunManifest:
    command: str
    flags: dict
    seed: int
    corpus: dict | None
    started_at: str
    finished_at: str | None = None
    version: str = __version__


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _fingerprint(path: str, corpus: Corpus) -> dict:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return {
        "path": os.path.abspath(path),
        "bytes": os.path.getsize(path),
        "sha256": digest.hexdigest(),
        "documents": corpus.num_docs,
        "tokens": corpus.total_tokens,
        "vocab_size": corpus.vocab_size,
    }


def _manifest_flags(args: argparse.Namespace) -> dict:
    skip = {"func"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _write_manifest(manifest: RunManifest, outdir: str | None) -> None:
    manifest.finished_at = _utc_now()
    payload = json.dumps(asdict(manifest), indent=2, sort_keys=True)
    if outdir is None:
        print(payload)
    else:
        with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as f:
            f.write(payload + "\n")


def _metrics_row(report: BatchReport) -> dict:
    return {
        "batch": report.batch_index,
        "iterations": report.iterations,
        "train_perplexity": report.final_train_perplexity,
        "heldout_perplexity": report.heldout_perplexity,
        "wall_ms": round(report.wall_time_s * 1000.0, 3),
        "tokens": report.tokens,
        "tokens_per_s": round(report.tokens_per_s, 3),
    }


class MetricsWriter:
    """Streams per-batch records to metrics.csv and metrics.jsonl."""

    def __init__(self, outdir: str):
        self._csv_file = open(os.path.join(outdir, "metrics.csv"), "w", newline="", encoding="utf-8")
        self._csv = csv.DictWriter(self._csv_file, fieldnames=METRICS_FIELDS)
        self._csv.writeheader()
        self._jsonl = open(os.path.join(outdir, "metrics.jsonl"), "w", encoding="utf-8")

    def write(self, report: BatchReport) -> None:
        row = _metrics_row(report)
        self._csv.writerow(row)
        self._jsonl.write(json.dumps(row) + "\n")

    def close(self) -> None:
        self._csv_file.close()
        self._jsonl.close()


def _write_eval_csv(outdir: str, rows, corpus_ppl: float) -> None:
    with open(os.path.join(outdir, "eval.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["doc_id", "heldout_tokens", "perplexity"])
        for doc_id, n_heldout, ppl in rows:
            writer.writerow([doc_id, n_heldout, repr(ppl)])
        writer.writerow(["ALL", sum(r[1] for r in rows), repr(corpus_ppl)])


def _load_training_corpus(args) -> Corpus:
    return load_corpus(args.docword, args.vocab)


def _evaluate_and_report(stats, hyper, test_corpus, args, outdir) -> float:
    phi = phi_matrix(stats, hyper)
    config = EvalConfig(
        foldin_sweeps=args.foldin_sweeps,
        foldin_averaged_tail=args.foldin_tail,
        seed=args.seed,
    )
    rows, ppl = eval_report(phi, test_corpus.documents, hyper, config)
    _write_eval_csv(outdir, rows, ppl)
    return ppl


def cmd_train_cgs(args) -> int:
    started = _utc_now()
    corpus = _load_training_corpus(args)
    train, test = split_train_test(corpus, args.test_fraction, args.seed)
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=corpus.vocab_size)
    rng = np.random.default_rng(args.seed)
    stats, batch_state = run_cgs(train, args.iters, hyper, rng)

    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(stats, hyper, os.path.join(args.out, "checkpoint.txt"))
    writer = MetricsWriter(args.out)
    final_ppl = train_perplexity(stats, batch_state, hyper) if train.total_tokens else None
    writer.write(
        BatchReport(
            batch_index=1,
            iterations=args.iters,
            train_perplexity=[final_ppl] if final_ppl is not None else [],
            wall_time_s=0.0,
            tokens=train.total_tokens,
        )
    )
    writer.close()
    heldout = _evaluate_and_report(stats, hyper, test, args, args.out)
    print(f"held-out perplexity: {heldout:.3f}")
    _write_manifest(
        RunManifest("train-cgs", _manifest_flags(args), args.seed, _fingerprint(args.docword, corpus), started),
        args.out,
    )
    return EXIT_OK


def cmd_train_sgs(args) -> int:
    started = _utc_now()
    corpus = _load_training_corpus(args)
    train, test = split_train_test(corpus, args.test_fraction, args.seed)
    if args.shuffle:
        train = shuffle_documents(train, args.seed)
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=corpus.vocab_size)
    config = StreamConfig(
        hyper=hyper,
        batch_size=args.batch_size,
        decay=args.decay,
        max_iters=args.max_iters,
        patience=args.patience if args.patience > 0 else None,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    writer = MetricsWriter(args.out)
    stats = run_sgs(minibatch_stream(train, args.batch_size), config, rng, sink=writer.write)
    writer.close()
    save_checkpoint(stats, hyper, os.path.join(args.out, "checkpoint.txt"))
    heldout = _evaluate_and_report(stats, hyper, test, args, args.out)
    print(f"held-out perplexity: {heldout:.3f}")
    _write_manifest(
        RunManifest("train-sgs", _manifest_flags(args), args.seed, _fingerprint(args.docword, corpus), started),
        args.out,
    )
    return EXIT_OK


def cmd_train_cdf(args) -> int:
    started = _utc_now()
    corpus = _load_training_corpus(args)
    train, test = split_train_test(corpus, args.test_fraction, args.seed)
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=corpus.vocab_size)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    writer = MetricsWriter(args.out)
    state = run_cdf_lda(minibatch_stream(train, args.batch_size), hyper, rng, sink=writer.write)
    writer.close()

    config = EvalConfig(foldin_sweeps=args.foldin_sweeps, foldin_averaged_tail=args.foldin_tail, seed=args.seed)
    rows, ppl = eval_report(state.phi, test.documents, hyper, config)
    _write_eval_csv(args.out, rows, ppl)
    print(f"held-out perplexity: {ppl:.3f}")
    _write_manifest(
        RunManifest("train-cdf", _manifest_flags(args), args.seed, _fingerprint(args.docword, corpus), started),
        args.out,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _utc_now()
    stats, hyper = load_checkpoint(args.checkpoint)
    corpus = _load_training_corpus(args)
    if corpus.vocab_size != hyper.vocab_size:
        raise CorpusFormatError(
            f"corpus vocabulary size {corpus.vocab_size} does not match checkpoint {hyper.vocab_size}"
        )
    os.makedirs(args.out, exist_ok=True)
    ppl = _evaluate_and_report(stats, hyper, corpus, args, args.out)
    print(f"held-out perplexity: {ppl:.3f}")
    _write_manifest(
        RunManifest("eval", _manifest_flags(args), args.seed, _fingerprint(args.docword, corpus), started),
        args.out,
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=args.vocab)
    server = CountServer(hyper, args.decay, bind=args.bind).start()
    host, port = server.address
    print(f"serving K={args.topics} V={args.vocab} decay={args.decay} on {host}:{port}", flush=True)
    manifest = RunManifest("serve", _manifest_flags(args), args.seed, None, _utc_now())
    _write_manifest(manifest, None)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        print(f"applied {server.merge_count} pushes", flush=True)
    return EXIT_OK


def cmd_worker(args) -> int:
    started = _utc_now()
    corpus = load_corpus(args.data)
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=corpus.vocab_size)
    config = StreamConfig(
        hyper=hyper,
        batch_size=args.batch_size,
        decay=1.0,
        max_iters=args.max_iters,
        patience=args.patience if args.patience > 0 else None,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    outdir = args.out
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        writer = MetricsWriter(outdir)
        sink = writer.write
    else:
        writer = None
        sink = lambda report: print(json.dumps(_metrics_row(report)), flush=True)
    try:
        worker_run(args.server, minibatch_stream(corpus, args.batch_size), config, rng, sink=sink)
    finally:
        if writer is not None:
            writer.close()
    _write_manifest(
        RunManifest("worker", _manifest_flags(args), args.seed, _fingerprint(args.data, corpus), started),
        outdir,
    )
    return EXIT_OK


def _bench_worker_entry(address, docs_payload, vocab_size, args_dict, seed):
    # runs in a separate process: rebuild the corpus shard and push it through
    from .corpus import Corpus, Document

    docs = [Document(id=i, tokens=t) for i, t in docs_payload]
    hyper = Hyper(
        alpha=args_dict["alpha"],
        beta=args_dict["beta"],
        n_topics=args_dict["topics"],
        vocab_size=vocab_size,
    )
    config = StreamConfig(
        hyper=hyper,
        batch_size=args_dict["batch_size"],
        decay=1.0,
        max_iters=args_dict["iters"],
        patience=None,
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    shard = Corpus(docs, vocab_size)
    worker_run(address, minibatch_stream(shard, args_dict["batch_size"]), config, rng)


def _bench_measure(corpus: Corpus, args, n_workers: int) -> tuple[int, float]:
    """Run n_workers processes over disjoint shards; returns (tokens, wall seconds)."""
    hyper = Hyper(alpha=args.alpha, beta=args.beta, n_topics=args.topics, vocab_size=corpus.vocab_size)
    shards = [corpus.documents[i::n_workers] for i in range(n_workers)]
    args_dict = {
        "alpha": args.alpha,
        "beta": args.beta,
        "topics": args.topics,
        "batch_size": args.batch_size,
        "iters": args.iters,
    }
    ctx = multiprocessing.get_context("spawn")
    with CountServer(hyper, args.decay) as server:
        server.start()
        procs = []
        for w, shard in enumerate(shards):
            payload = [(d.id, d.tokens) for d in shard]
            procs.append(
                ctx.Process(
                    target=_bench_worker_entry,
                    args=(server.address, payload, corpus.vocab_size, args_dict, args.seed + w),
                )
            )
        start = time.perf_counter()
        for p in procs:
            p.start()
        for p in procs:
            p.join()
        wall = time.perf_counter() - start
        failed = [p.exitcode for p in procs if p.exitcode != 0]
        if failed:
            raise RuntimeError(f"{len(failed)} bench worker(s) exited with {failed}")
    return corpus.total_tokens, wall


def cmd_bench(args) -> int:
    started = _utc_now()
    if args.docword:
        corpus = load_corpus(args.docword, args.vocab)
        fingerprint = _fingerprint(args.docword, corpus)
    else:
        spec = GenSpec(
            n_docs=args.synth_docs,
            n_topics=args.topics,
            vocab_size=args.synth_vocab,
            alpha=args.alpha,
            beta=args.beta,
            doc_length=args.synth_doc_len,
            seed=args.seed,
        )
        corpus = generate(spec).corpus
        fingerprint = {"synthetic": _manifest_flags(args)}

    os.makedirs(args.out, exist_ok=True)
    single_tokens, single_wall = _bench_measure(corpus, args, 1)
    single_rate = single_tokens / single_wall
    rows = [(1, single_tokens, single_wall, single_rate, single_rate)]
    for n in args.workers:
        if n == 1:
            continue
        tokens, wall = _bench_measure(corpus, args, n)
        rows.append((n, tokens, wall, tokens / wall, single_rate * n))

    with open(os.path.join(args.out, "bench.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["workers", "tokens", "wall_s", "tokens_per_s", "ideal_tokens_per_s"])
        for row in rows:
            writer.writerow([row[0], row[1], f"{row[2]:.3f}", f"{row[3]:.1f}", f"{row[4]:.1f}"])
    for workers, tokens, wall, rate, ideal in rows:
        print(f"workers={workers} tokens={tokens} wall={wall:.2f}s tokens/s={rate:.0f} ideal={ideal:.0f}")
    _write_manifest(RunManifest("bench", _manifest_flags(args), args.seed, fingerprint, started), args.out)
    return EXIT_OK


def _add_model_flags(p: _Parser) -> None:
    p.add_argument("--topics", type=_positive_int, default=50, help="number of topics (default 50)")
    p.add_argument("--alpha", type=_positive, default=0.1, help="document-topic prior (default 0.1)")
    p.add_argument("--beta", type=_positive, default=0.03, help="topic-word prior (default 0.03)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")


def _add_corpus_flags(p: _Parser) -> None:
    p.add_argument("--docword", required=True, help="UCI docword file")
    p.add_argument("--vocab", default=None, help="vocabulary file (one word per line)")


def _add_eval_flags(p: _Parser) -> None:
    p.add_argument("--test-fraction", type=_ratio, default=0.2, help="held-out document fraction (default 0.2)")
    p.add_argument("--foldin-sweeps", type=_positive_int, default=50, help="fold-in Gibbs sweeps (default 50)")
    p.add_argument("--foldin-tail", type=_positive_int, default=20, help="sweeps averaged for theta (default 20)")


def build_parser() -> _Parser:
    parser = _Parser(prog="streamlda", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-cgs", help="batch collapsed Gibbs training")
    _add_corpus_flags(p)
    _add_model_flags(p)
    _add_eval_flags(p)
    p.add_argument("--iters", type=_positive_int, default=100, help="Gibbs iterations (default 100)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_cgs)

    p = sub.add_parser("train-sgs", help="streaming Gibbs training")
    _add_corpus_flags(p)
    _add_model_flags(p)
    _add_eval_flags(p)
    p.add_argument("--batch-size", type=_positive_int, required=True, help="documents per mini-batch")
    p.add_argument("--decay", type=_decay, default=1.0, help="count decay per batch, in (0, 1] (default 1.0)")
    p.add_argument("--max-iters", type=_positive_int, default=400, help="iteration cap per batch (default 400)")
    p.add_argument("--patience", type=int, default=10,
                   help="stop after this many non-improving iterations; 0 disables (default 10)")
    p.add_argument("--shuffle", action="store_true", help="seeded shuffle of the training stream order")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_sgs)

    p = sub.add_parser("train-cdf", help="density-filtering baseline training")
    _add_corpus_flags(p)
    _add_model_flags(p)
    _add_eval_flags(p)
    p.add_argument("--batch-size", type=_positive_int, default=100, help="documents per metrics batch (default 100)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_cdf)

    p = sub.add_parser("eval", help="held-out perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint file")
    _add_corpus_flags(p)
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--foldin-sweeps", type=_positive_int, default=50)
    p.add_argument("--foldin-tail", type=_positive_int, default=20)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run a count server")
    p.add_argument("--bind", type=_address, default=("127.0.0.1", 0), help="HOST:PORT to listen on")
    p.add_argument("--topics", type=_positive_int, required=True)
    p.add_argument("--vocab", type=_positive_int, required=True, help="vocabulary size (an integer)")
    p.add_argument("--alpha", type=_positive, default=0.1)
    p.add_argument("--beta", type=_positive, default=0.03)
    p.add_argument("--decay", type=_decay, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("worker", help="run a worker against a count server")
    p.add_argument("--server", type=_address, required=True, help="server HOST:PORT")
    p.add_argument("--data", required=True, help="UCI docword file with this worker's documents")
    p.add_argument("--batch-size", type=_positive_int, required=True)
    p.add_argument("--topics", type=_positive_int, default=50)
    p.add_argument("--alpha", type=_positive, default=0.1)
    p.add_argument("--beta", type=_positive, default=0.03)
    p.add_argument("--max-iters", type=_positive_int, default=400)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: metrics to stdout)")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("bench", help="tokens/sec with 1..N workers")
    p.add_argument("--docword", default=None, help="UCI docword file (default: synthetic corpus)")
    p.add_argument("--vocab", default=None, help="vocabulary file")
    _add_model_flags(p)
    p.add_argument("--synth-docs", type=_positive_int, default=400, help="synthetic corpus size (default 400)")
    p.add_argument("--synth-vocab", type=_positive_int, default=200, help="synthetic vocabulary size (default 200)")
    p.add_argument("--synth-doc-len", type=_positive_int, default=100, help="synthetic document length (default 100)")
    p.add_argument("--batch-size", type=_positive_int, default=100)
    p.add_argument("--iters", type=_positive_int, default=10, help="fixed iterations per batch (default 10)")
    p.add_argument("--decay", type=_decay, default=1.0)
    p.add_argument("--workers", type=_positive_int, nargs="+", default=[2], help="worker counts to measure")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"streamlda: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CorpusFormatError as exc:
        print(f"streamlda: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"streamlda: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
