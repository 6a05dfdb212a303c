"""Epoch loops, transcoder targets, evaluation and checkpoint-driven curricula."""
import logging
import math

import numpy as np

from . import autodiff as ad
from .data import make_batches
from .errors import NonFiniteError, TaskMismatchError
from .metrics import evaluate
from .models import SPEECH_INPUT, TaskKind, cascade_translate, greedy_decode
from .optim import adam_step, clip_grad_norm

log = logging.getLogger(__name__)

BATCH_SIZE = 16
CLIP_NORM = 5.0


class DivergenceError(RuntimeError):
    def __init__(self, message, batch_index=None, loss=None, phase=None):
        self.batch_index = batch_index
        self.loss = loss
        self.phase = phase
        super().__init__(message)


def batch_key(m):
    return "frames" if m.task in SPEECH_INPUT else "src"


def trainable_params(m, freeze=()):
    """Parameters outside the frozen slots; frozen slots get ``requires_grad=False``."""
    out = {}
    for slot, comp in m.parts.items():
        frozen = slot in freeze
        for k, t in comp.named_params():
            t.requires_grad = not frozen
            if not frozen:
                out[f"{slot}/{k}"] = t
    return out


def transcoder_targets(mt, src, src_lens=None):
    """Frozen MT-encoder states for source ids: [B x T_src x 2H] (or [T x 2H] for one sentence)."""
    if mt.task != TaskKind.MT:
        raise TaskMismatchError(f"transcoder targets come from an MT model, got {mt.task.value}")
    src = np.asarray(src, dtype=np.int64)
    single = src.ndim == 1
    if single:
        src = src[None]
    if src_lens is None:
        src_lens = np.full(src.shape[0], src.shape[1])
    with ad.no_grad():
        states = mt.parts["encoder"](src, src_lens).data.copy()
    return states[0] if single else states


def _targets_fn(mt):
    if mt is None:
        return None
    return lambda b: transcoder_targets(mt, b.src, b.src_lens)


def train_epoch(m, corpus, opt, seed, batch_size=BATCH_SIZE, clip=CLIP_NORM, mt=None, freeze=(), dropout=0.0):
    """One shuffled pass of teacher-forced training.

    Optimizes the total loss (auxiliary terms included) and returns the mean
    batch value of the primary term, the same quantity :func:`evaluate_loss`
    reports. Batch order and dropout masks are functions of ``seed`` alone.
    """
    if len(corpus) == 0:
        raise ValueError("train_epoch: empty dataset")
    params = trainable_params(m, freeze)
    term = primary_term(m)
    targets_fn = _targets_fn(mt)
    losses = []
    for bi, batch in enumerate(make_batches(corpus, batch_size, seed, batch_key(m))):
        for p in params.values():
            p.grad = None
        targets = targets_fn(batch) if targets_fn else None
        with ad.Tape() as tape, ad.dropout_scope(dropout, np.random.default_rng([seed, bi])):
            try:
                terms = m.loss_terms(batch, targets=targets)
                tape.backward(terms["loss"])
            except NonFiniteError as e:
                raise DivergenceError(f"non-finite loss at batch {bi}: {e}", bi) from e
        value = terms[term].item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at batch {bi}", bi, value)
        clip_grad_norm(params, clip)
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
        adam_step(opt, params, grads)
        losses.append(value)
    return float(np.mean(losses))


def primary_term(m):
    return "mse" if m.task == TaskKind.TRANSCODER else "ce"


def evaluate_loss(m, corpus, batch_size=BATCH_SIZE, mt=None, term=None):
    """Token- (or row-) weighted mean of the primary loss term over a corpus."""
    term = term or primary_term(m)
    targets_fn = _targets_fn(mt)
    total = weight = 0.0
    with ad.no_grad():
        for batch in make_batches(corpus, batch_size, 0, batch_key(m)):
            targets = targets_fn(batch) if targets_fn else None
            value = m.loss_terms(batch, targets=targets)[term].item()
            n = float(batch.src_lens.sum() if m.task in (TaskKind.ASR, TaskKind.TRANSCODER)
                      else batch.tgt_lens.sum())
            total += value * n
            weight += n
    return total / weight


def model_input(m, corpus, i):
    if m.task in SPEECH_INPUT:
        return corpus.frames(i)
    return corpus.examples[i].src


def references(m, corpus):
    side = "src" if m.task == TaskKind.ASR else "tgt"
    return [[int(t) for t in getattr(ex, side)[:-1]] for ex in corpus.examples]


def decode_corpus(m, corpus, max_len=None):
    out = []
    for i, ex in enumerate(corpus.examples):
        limit = max_len or 2 * max(len(ex.src), len(ex.tgt)) + 5
        out.append(greedy_decode(m, model_input(m, corpus, i), limit).tokens)
    return out


def default_metric(m):
    return "wer" if m.task == TaskKind.ASR else "bleu1"


def evaluate_model(m, corpus, metric=None, max_len=None, **kw):
    """Greedy-decode ``corpus`` and score it; ``kw`` goes to :func:`metrics.evaluate`."""
    metric = metric or default_metric(m)
    if (metric == "wer") != (m.task == TaskKind.ASR):
        raise TaskMismatchError(f"metric {metric} does not apply to {m.task.value} models")
    return evaluate(metric, references(m, corpus), decode_corpus(m, corpus, max_len), **kw)


def evaluate_cascade(asr, mt, corpus, max_len=None, **kw):
    hyps = []
    for i, ex in enumerate(corpus.examples):
        limit = max_len or 2 * max(len(ex.src), len(ex.tgt)) + 5
        hyps.append(cascade_translate(asr, mt, corpus.frames(i), limit).tokens)
    refs = [[int(t) for t in ex.tgt[:-1]] for ex in corpus.examples]
    return evaluate("bleu1", refs, hyps, **kw)
