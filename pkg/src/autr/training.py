"""SGVB training: single-sample ELBO, KL annealing, word dropout and Adam."""

from __future__ import annotations

import csv
import logging
import math
import time
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .checkpoint import Checkpoint, OptimizerState
from .config import TrainConfig, rng_stream
from .data import Batch, EncodedSentence, Vocabulary, batch_iter, encode_corpus, stack_ids
from .encoder import encode, kl_gaussian, sample_z
from .model import decoder_logprob
from .params import ModelParams, init_params

log = logging.getLogger(__name__)

METRICS_HEADER = ["iter", "loss", "recon", "kl", "anneal", "wallclock_s"]


class TrainingError(RuntimeError):
    pass


def anneal_weight(iteration: int, anneal_end: int) -> float:
    """KL weight rising linearly from 0 to 1 over ``anneal_end`` iterations."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if anneal_end == 0:
        return 1.0
    return min(1.0, iteration / anneal_end)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray | None:
    if rate <= 0.0:
        return None
    return rng.random(shape) < rate


def elbo_batch(batch, params: ModelParams, anneal_weight: float, rng=None, *,
               eps=None, dropout: float = 0.0, mask=None):
    """Loss = -mean_b [log p(x_b | z_b) - w * KL_b] with one z per sentence.

    ``eps`` and ``mask`` may be injected; otherwise they are drawn from
    ``rng``.  Returns ``(loss, {"recon": ..., "kl": ...})`` where recon and
    kl are batch means.
    """
    if not 0.0 <= anneal_weight <= 1.0:
        raise ValueError("anneal_weight must lie in [0, 1]")
    ids = batch.ids if isinstance(batch, Batch) else stack_ids(batch) \
        if isinstance(batch, (list, tuple)) else np.asarray(batch)
    B, L = ids.shape
    if eps is None:
        eps = rng.standard_normal((B, params.dims.Dz))
    if mask is None and dropout > 0.0:
        mask = dropout_mask(rng, (B, L), dropout)
    post = encode(ids, params)
    z = sample_z(post, eps).z
    recon = decoder_logprob(params, z, ids, mask)
    kl = kl_gaussian(post)
    loss = -nx.mean(recon - kl * anneal_weight)
    return loss, {"recon": float(recon.data.mean()), "kl": float(kl.data.mean())}


def adam_step(params: Mapping, grads: Mapping[str, np.ndarray], state: OptimizerState,
              lr: float) -> OptimizerState:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train(config: TrainConfig, corpus: Sequence, vocab: Vocabulary | None = None, *,
          out_dir=None, clock: Callable[[], float] | None = None,
          resume: Checkpoint | None = None) -> Checkpoint:
    """Fit the model to ``corpus`` (token lists or EncodedSentences).

    Every ``log_every`` iterations a row goes to ``metrics.csv`` in
    ``out_dir``; checkpoints are written every ``checkpoint_every``
    iterations and at the end.  ``clock`` supplies the wallclock column.
    """
    if vocab is None:
        raise ValueError("a vocabulary is required")
    sentences = corpus if corpus and isinstance(corpus[0], EncodedSentence) \
        else encode_corpus(corpus, vocab, config.L)
    if not sentences:
        raise TrainingError("no training sentences fit the configured length")
    clock = clock or time.perf_counter
    t0 = clock()

    if resume is not None:
        params, state, start = resume.params, resume.opt_state, resume.iteration
    else:
        params = init_params(config.dims(len(vocab)), int(rng_stream(config.seed, "init").integers(2**31)))
        state = OptimizerState.zeros_like(params)
        start = 0
    ckpt = Checkpoint(config, params, state, start, vocab=vocab)

    eps_rng = rng_stream(config.seed, "eps")
    drop_rng = rng_stream(config.seed, "dropout")
    shuffle_seed = int(rng_stream(config.seed, "shuffle").integers(2**31))
    batches = batch_iter(sentences, config.batch_size, shuffle_seed, epochs=None)
    for _ in range(start):  # keep the streams aligned when resuming
        b = next(batches)
        eps_rng.standard_normal((len(b), config.Dz))
        dropout_mask(drop_rng, b.ids.shape, config.dropout)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "a" if resume else "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if resume is None:
            writer.writerow(METRICS_HEADER)
    try:
        for it in range(start, config.iterations):
            batch = next(batches)
            w = anneal_weight(it, config.anneal_end)
            eps = eps_rng.standard_normal((len(batch), config.Dz))
            mask = dropout_mask(drop_rng, batch.ids.shape, config.dropout)
            loss, metrics = elbo_batch(batch, params, w, eps=eps, mask=mask)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at iteration {it + 1} "
                                    f"(batch index {it}, seed {batch.rng_seed})")
            grads = nx.backward(loss, params.tensors)
            if config.clip_norm > 0:
                clip_gradients(grads, config.clip_norm)
            adam_step(params.tensors, grads, state, config.lr)
            ckpt.iteration = it + 1
            done = it + 1 == config.iterations
            if (it + 1) % config.log_every == 0 or done:
                row = [it + 1, f"{loss.item():.6f}", f"{metrics['recon']:.6f}",
                       f"{metrics['kl']:.6f}", f"{w:.6f}", f"{clock() - t0:.3f}"]
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
                log.info("iter %d loss %.4f recon %.4f kl %.4f anneal %.3f",
                         it + 1, loss.item(), metrics["recon"], metrics["kl"], w)
            if out is not None and ((it + 1) % config.checkpoint_every == 0 or done):
                ckpt.save(out / "model.autr")
    finally:
        if writer is not None:
            fh.close()
    return ckpt


def perplexity(total_elbo: float, n_tokens: int) -> float:
    return math.exp(-total_elbo / n_tokens)


def evaluate(params: ModelParams, sentences: Sequence[EncodedSentence], n_samples: int,
             seed: int = 0, batch_size: int = 256, eps: np.ndarray | None = None) -> dict:
    """Multi-sample ELBO estimate: mean over ``n_samples`` draws of the
    single-sample bound log p(x|z) - KL.

    Perplexity is exp(-sum ELBO / sum true_length), so PAD slots count in
    the likelihood but not in the token total.  ``eps`` of shape
    (n_samples, N, Dz) may be injected.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if isinstance(params, Checkpoint):
        params = params.params
    rng = rng_stream(seed, "eval")
    N = len(sentences)
    if eps is None:
        eps = rng.standard_normal((n_samples, N, params.dims.Dz))
    elbos = np.zeros(N)
    kls = np.zeros(N)
    with nx.no_grad():
        for start in range(0, N, batch_size):
            sl = slice(start, min(N, start + batch_size))
            ids = stack_ids(sentences[sl])
            post = encode(ids, params)
            kl = kl_gaussian(post).data.astype(np.float64)
            recon = np.zeros(len(ids))
            for s in range(n_samples):
                z = sample_z(post, eps[s, sl]).z
                recon += decoder_logprob(params, z, ids).data
            elbos[sl] = recon / n_samples - kl
            kls[sl] = kl
    tokens = sum(s.true_length for s in sentences)
    return {"elbo": float(elbos.mean()), "kl": float(kls.mean()),
            "ppl": perplexity(float(elbos.sum()), tokens), "sentences": N,
            "per_sentence": elbos}
