"""Streaming topic-model inference: collapsed Gibbs sampling for LDA in
batch, streaming (with prior decay), density-filtering and distributed
count-server modes, with held-out perplexity evaluation."""

from .corpus import (
    Corpus,
    CorpusFormatError,
    Document,
    MiniBatch,
    Vocabulary,
    load_corpus,
    minibatch_stream,
    parse_docword,
    parse_uci,
    split_tokens_half,
    split_train_test,
    write_uci,
)
from .stats import (
    DocState,
    GlobalStats,
    Hyper,
    SparseDelta,
    apply_decay,
    delta_between,
    load_checkpoint,
    merge_delta,
    new_stats,
    phi_matrix,
    phi_mean,
    save_checkpoint,
    snapshot,
    theta_mean,
)
from .sampler import BatchState, conditional_probs, progressive_init, resample_token, run_cgs, sweep
from .streaming import BatchReport, ConvergenceRule, StreamConfig, process_minibatch, run_sgs, train_perplexity
from .evaluate import EvalConfig, corpus_perplexity, doc_log_likelihood, fold_in_theta
from .cdf import CdfState, cdf_process_doc, run_cdf_lda, sample_dirichlet
from .synth import GenSpec, SynthResult, generate
from .distributed import CountServer, replay_pushes, serve, worker_run

__version__ = "0.1.0"
