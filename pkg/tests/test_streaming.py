import gc
import math

import numpy as np
import pytest

from streamlda.corpus import Corpus, Document, MiniBatch, minibatch_stream
from streamlda.sampler import progressive_init, run_cgs
from streamlda.stats import Hyper, live_docstate_count, new_stats
from streamlda.streaming import (
    BatchReport,
    ConvergenceRule,
    StreamConfig,
    process_minibatch,
    run_sgs,
    train_perplexity,
)
from streamlda.synth import GenSpec, generate


def _hyper(alpha=0.1, beta=0.03, K=3, V=10):
    return Hyper(alpha=alpha, beta=beta, n_topics=K, vocab_size=V)


class TestConvergenceRule:
    def test_patience_branch(self):
        # value 9 first improves, then three consecutive non-improving stops
        rule = ConvergenceRule(patience=3, max_iters=100)
        decisions = [rule.update(v) for v in [10.0, 9.0, 9.0, 9.0, 9.0]]
        assert decisions == [False, False, False, False, True]
        assert rule.iterations == 5

    def test_max_iters_branch(self):
        rule = ConvergenceRule(patience=3, max_iters=6)
        values = [100.0 / (i + 1) for i in range(10)]  # strictly improving
        stops = []
        for v in values:
            stops.append(rule.update(v))
            if stops[-1]:
                break
        assert rule.iterations == 6
        assert stops == [False] * 5 + [True]

    def test_patience_disabled(self):
        rule = ConvergenceRule(patience=None, max_iters=4)
        assert [rule.update(5.0) for _ in range(4)] == [False, False, False, True]

    def test_tiny_improvements_do_not_reset(self):
        # improvements below the relative tolerance count as stale
        rule = ConvergenceRule(patience=2, max_iters=100, rel_tol=1e-6)
        assert rule.update(10.0) is False
        assert rule.update(10.0 * (1 - 1e-9)) is False
        assert rule.update(10.0 * (1 - 2e-9)) is True

    def test_validation(self):
        with pytest.raises(ValueError):
            ConvergenceRule(patience=0, max_iters=10)
        with pytest.raises(ValueError):
            ConvergenceRule(patience=5, max_iters=0)


class TestTrainPerplexity:
    def test_uniform_model_gives_vocab_size(self):
        hyper = _hyper(K=3, V=10)
        # assignments built against a scratch model; evaluated against empty stats
        scratch = new_stats(hyper)
        docs = [Document(i, [0, 3, 7, 9]) for i in range(3)]
        bs = progressive_init(scratch, MiniBatch(docs, 1), hyper, np.random.default_rng(0))
        ppl = train_perplexity(new_stats(hyper), bs, hyper)
        assert ppl == pytest.approx(10.0, rel=1e-12)

    def test_single_token_batch(self):
        hyper = _hyper(K=2, V=4)
        stats = new_stats(hyper)
        bs = progressive_init(stats, MiniBatch([Document(0, [2])], 1), hyper,
                              np.random.default_rng(1))
        state = bs.docs[0]
        p = 0.0
        for k in range(2):
            theta = (state.topic_counts[k] + hyper.alpha) / (1 + 2 * hyper.alpha)
            phi = (stats.topic_word[k].get(2, 0.0) + hyper.beta) / (
                stats.topic_totals[k] + 4 * hyper.beta
            )
            p += theta * phi
        assert train_perplexity(stats, bs, hyper) == pytest.approx(1.0 / p, rel=1e-12)

    def test_empty_batch_rejected(self):
        hyper = _hyper()
        stats = new_stats(hyper)
        bs = progressive_init(stats, MiniBatch([Document(0, [])], 1), hyper,
                              np.random.default_rng(0))
        with pytest.raises(ValueError):
            train_perplexity(stats, bs, hyper)

    def test_decreases_on_average_over_early_iterations(self):
        hyper = _hyper(K=4, V=40)
        drops = []
        for seed in range(5):
            res = generate(GenSpec(n_docs=40, n_topics=4, vocab_size=40, doc_length=30,
                                   seed=seed))
            config = StreamConfig(hyper=hyper, batch_size=40, decay=1.0, max_iters=6,
                                  patience=None, seed=seed)
            reports = []
            run_sgs(minibatch_stream(res.corpus, 40), config, np.random.default_rng(seed),
                    sink=reports.append)
            trace = reports[0].train_perplexity
            drops.append(trace[0] - trace[-1])
        assert np.mean(drops) > 0


class TestProcessMinibatch:
    def test_matches_cgs_on_single_whole_batch(self):
        res = generate(GenSpec(n_docs=30, n_topics=3, vocab_size=20, doc_length=15, seed=3))
        hyper = _hyper(K=3, V=20)
        config = StreamConfig(hyper=hyper, batch_size=30, decay=1.0, max_iters=12,
                              patience=None, seed=0)
        stats = new_stats(hyper)
        batch = next(minibatch_stream(res.corpus, 30))
        report = process_minibatch(stats, batch, config, np.random.default_rng(42))
        cgs_stats, _ = run_cgs(res.corpus, 12, hyper, np.random.default_rng(42))
        assert stats == cgs_stats
        assert report.iterations == 12
        assert len(report.train_perplexity) == 12

    def test_stops_after_patience_non_improving(self):
        res = generate(GenSpec(n_docs=20, n_topics=2, vocab_size=10, doc_length=10, seed=5))
        hyper = _hyper(K=2, V=10)
        config = StreamConfig(hyper=hyper, batch_size=20, decay=1.0, max_iters=400,
                              patience=3, seed=0)
        stats = new_stats(hyper)
        batch = next(minibatch_stream(res.corpus, 20))
        report = process_minibatch(stats, batch, config, np.random.default_rng(0))
        assert report.iterations < 400

    def test_decay_halves_totals(self):
        res = generate(GenSpec(n_docs=10, n_topics=2, vocab_size=10, doc_length=20, seed=7))
        hyper = _hyper(K=2, V=10)
        config = StreamConfig(hyper=hyper, batch_size=10, decay=0.5, max_iters=3,
                              patience=None, seed=0)
        stats = new_stats(hyper)
        batch = next(minibatch_stream(res.corpus, 10))
        process_minibatch(stats, batch, config, np.random.default_rng(0))
        assert sum(stats.topic_totals) == pytest.approx(0.5 * batch.token_count, rel=1e-9)

    def test_report_carries_thetas(self):
        res = generate(GenSpec(n_docs=6, n_topics=2, vocab_size=10, doc_length=5, seed=1))
        hyper = _hyper(K=2, V=10)
        config = StreamConfig(hyper=hyper, batch_size=6, decay=1.0, max_iters=2,
                              patience=None, seed=0)
        stats = new_stats(hyper)
        report = process_minibatch(stats, next(minibatch_stream(res.corpus, 6)), config,
                                   np.random.default_rng(0))
        assert len(report.doc_thetas) == 6
        for theta in report.doc_thetas:
            assert sum(theta) == pytest.approx(1.0, abs=1e-12)


class TestRunSgs:
    def test_empty_stream_returns_fresh_stats(self):
        hyper = _hyper()
        config = StreamConfig(hyper=hyper, batch_size=5)
        stats = run_sgs(iter([]), config, np.random.default_rng(0))
        assert stats == new_stats(hyper)

    def test_single_batch_stream_equals_process_minibatch(self):
        res = generate(GenSpec(n_docs=12, n_topics=2, vocab_size=15, doc_length=10, seed=9))
        hyper = _hyper(K=2, V=15)
        config = StreamConfig(hyper=hyper, batch_size=12, decay=1.0, max_iters=5,
                              patience=None, seed=0)
        via_run = run_sgs(minibatch_stream(res.corpus, 12), config, np.random.default_rng(4))
        direct = new_stats(hyper)
        process_minibatch(direct, next(minibatch_stream(res.corpus, 12)), config,
                          np.random.default_rng(4))
        assert via_run == direct

    def test_decay_applied_once_per_batch(self):
        # with decay d, totals telescope: sum_t tokens_t * d^(T - t + 1)
        res = generate(GenSpec(n_docs=30, n_topics=2, vocab_size=10, doc_length=8, seed=2))
        hyper = _hyper(K=2, V=10)
        d = 0.5
        config = StreamConfig(hyper=hyper, batch_size=10, decay=d, max_iters=2,
                              patience=None, seed=0)
        batches = list(minibatch_stream(res.corpus, 10))
        stats = run_sgs(iter(batches), config, np.random.default_rng(0))
        expected = sum(b.token_count * d ** (len(batches) - i) for i, b in enumerate(batches))
        assert sum(stats.topic_totals) == pytest.approx(expected, rel=1e-9)

    def test_heldout_eval_hook(self):
        res = generate(GenSpec(n_docs=9, n_topics=2, vocab_size=10, doc_length=6, seed=0))
        hyper = _hyper(K=2, V=10)
        config = StreamConfig(hyper=hyper, batch_size=3, decay=1.0, max_iters=2,
                              patience=None, seed=0)
        seen = []
        run_sgs(minibatch_stream(res.corpus, 3), config, np.random.default_rng(0),
                sink=lambda r: seen.append(r.heldout_perplexity),
                heldout_eval=lambda stats: float(sum(stats.topic_totals)))
        assert len(seen) == 3
        assert all(v is not None for v in seen)

    def test_constant_memory_and_batch_count(self):
        res = generate(GenSpec(n_docs=50, n_topics=2, vocab_size=10, doc_length=5, seed=8))
        hyper = _hyper(K=2, V=10)
        config = StreamConfig(hyper=hyper, batch_size=10, decay=1.0, max_iters=2,
                              patience=None, seed=0)
        peaks = []

        def sink(report):
            gc.collect()
            peaks.append(live_docstate_count())

        run_sgs(minibatch_stream(res.corpus, 10), config, np.random.default_rng(0), sink=sink)
        gc.collect()
        assert len(peaks) == 5
        assert max(peaks) <= 10
        assert live_docstate_count() == 0


class TestStreamConfig:
    def test_validation(self):
        hyper = _hyper()
        with pytest.raises(ValueError):
            StreamConfig(hyper=hyper, batch_size=0)
        with pytest.raises(ValueError):
            StreamConfig(hyper=hyper, batch_size=1, decay=0.0)
        with pytest.raises(ValueError):
            StreamConfig(hyper=hyper, batch_size=1, decay=1.2)
        with pytest.raises(ValueError):
            StreamConfig(hyper=hyper, batch_size=1, patience=0)
        with pytest.raises(ValueError):
            StreamConfig(hyper=hyper, batch_size=1, max_iters=0)
