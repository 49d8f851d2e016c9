"""Inference-time tools: beam search, sampling, reconstruction, imputation,
latent interpolation, nearest-sentence search and canvas traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .config import rng_stream
from .data import EOS, N_RESERVED, PAD, EncodedSentence, Vocabulary, decode, stack_ids
from .encoder import as_id_matrix, encode
from .model import decoder_logprob, make_scorer
from .params import ModelParams
from .writer import run_writer


@dataclass
class Beam:
    """Live hypotheses, best first; ties go to the lexicographically smaller
    id sequence."""

    K: int
    prefixes: np.ndarray  # (n, l) int
    scores: np.ndarray  # (n,)
    state: object = None

    @property
    def hypotheses(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(i) for i in p), float(s)) for p, s in zip(self.prefixes, self.scores)]


def _allowed(prefixes: np.ndarray, l: int, L: int, V: int, forced: int,
             free_tokens: np.ndarray) -> np.ndarray:
    n = prefixes.shape[0]
    finished = (prefixes == EOS).any(axis=1) if l else np.zeros(n, bool)
    allowed = np.zeros((n, V), dtype=bool)
    if forced >= 0:
        # a pinned token only has to keep the sentence well formed
        if forced == PAD:
            allowed[finished, PAD] = True
        elif forced == EOS or l < L - 1:
            allowed[~finished, forced] = True
        return allowed
    if l == L - 1:
        allowed[~finished, EOS] = True
    else:
        allowed[~finished] = free_tokens
    allowed[finished, PAD] = True
    return allowed


def beam_search(scorer, L: int, V: int, K: int, forced: Sequence[int] | None = None,
                free_tokens: np.ndarray | None = None) -> Beam:
    """Width-K search over well-formed sentences of exactly L slots.

    Before EOS any non-PAD token is allowed (``free_tokens`` narrows this);
    the last slot must close the sentence if it is still open, and after EOS
    only PAD may follow.  ``forced[l] >= 0`` pins slot l to that id.
    """
    if K < 1:
        raise ValueError("beam width K must be >= 1")
    forced = np.full(L, -1) if forced is None else np.asarray(forced)
    if free_tokens is None:
        free_tokens = np.ones(V, dtype=bool)
        free_tokens[PAD] = False
    state = scorer.start()
    prefixes = np.zeros((1, 0), dtype=np.int64)
    scores = np.zeros(1)
    for l in range(L):
        lp = scorer.logprobs(state, l).astype(np.float64)
        cand = scores[:, None] + lp
        cand[~_allowed(prefixes, l, L, V, int(forced[l]), free_tokens)] = -np.inf
        parents, tokens = np.nonzero(np.isfinite(cand))
        if parents.size == 0:
            raise ValueError("no well-formed completion satisfies the constraints")
        vals = cand[parents, tokens]
        keys = (tokens,) + tuple(prefixes[parents, j] for j in range(l - 1, -1, -1)) + (-vals,)
        order = np.lexsort(keys)[:K]
        parents, tokens = parents[order], tokens[order]
        scores = vals[order]
        state = scorer.extend(state, parents, tokens)
        prefixes = np.concatenate([prefixes[parents], tokens[:, None]], axis=1)
    return Beam(K, prefixes, scores, state)


def score_sequence(scorer, ids: Sequence[int]) -> float:
    """Score of a fixed id sequence under an incremental scorer."""
    state = scorer.start()
    total = 0.0
    for l, tok in enumerate(ids):
        total += float(scorer.logprobs(state, l)[0, tok])
        state = scorer.extend(state, np.array([0]), np.array([tok]))
    return total


def beam_decode(z, params: ModelParams, K: int, canvas=None) -> tuple[EncodedSentence, float]:
    """Best sentence for a single z; for AUTR the canvas is fixed from z
    (or given) and only the emission chain is searched."""
    scorer = make_scorer(params, np.asarray(nx.as_tensor(z).data).reshape(1, -1), canvas=canvas)
    beam = beam_search(scorer, params.dims.L, params.dims.V, K)
    return EncodedSentence.from_ids(beam.prefixes[0]), float(beam.scores[0])


def greedy_decode(z, params: ModelParams) -> tuple[EncodedSentence, float]:
    return beam_decode(z, params, 1)


def sample_prior(params: ModelParams, n: int, K: int, seed: int) -> list[EncodedSentence]:
    zs = rng_stream(seed, "prior").standard_normal((n, params.dims.Dz)).astype(params.dtype)
    return [beam_decode(z, params, K)[0] for z in zs]


def posterior(x, params: ModelParams):
    with nx.no_grad():
        post = encode(as_id_matrix(x), params)
    return post.mu.data, post.logvar.data


def reconstruct(x, params: ModelParams, mode: str = "posterior-mean", K: int = 15,
                eps=None, seed: int = 0) -> EncodedSentence:
    mu, logvar = posterior(x, params)
    if mode == "posterior-mean":
        z = mu[0]
    elif mode == "posterior-sample":
        if eps is None:
            eps = rng_stream(seed, "eps").standard_normal(mu.shape[1])
        z = mu[0] + np.exp(0.5 * logvar[0]) * np.asarray(eps, dtype=mu.dtype)
    else:
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    return beam_decode(z, params, K)[0]


# ------------------------------------------------------------------ imputation


@dataclass
class ImputationTask:
    ids: np.ndarray  # (L,) observed ids; values at missing slots are ignored
    missing: np.ndarray  # (L,) bool
    samples: int = 5
    max_iters: int = 20
    restarts: int = 10

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.ids.shape != self.missing.shape:
            raise ValueError("ids and missing mask differ in shape")
        if self.missing.all():
            raise ValueError("at least one position must be observed")
        for k in ("samples", "max_iters", "restarts"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")


@dataclass
class ImputationResult:
    completion: EncodedSentence
    bound: float
    # per restart, per M-like step: (bound of the incoming completion,
    # bound of the chosen completion), both under the same z samples
    history: list[list[tuple[float, float]]] = field(default_factory=list)
    restart_bounds: list[float] = field(default_factory=list)


def _draw_z(x: np.ndarray, params: ModelParams, eps: np.ndarray) -> np.ndarray:
    mu, logvar = posterior(x, params)
    return mu + np.exp(0.5 * logvar) * eps.astype(mu.dtype)


def m_like_step(x: np.ndarray, missing: np.ndarray, zs: np.ndarray, params: ModelParams,
                K: int = 15):
    """Re-choose the missing words of ``x`` for fixed latent samples ``zs``.

    Returns ``(completion, bound_before, bound_after)`` where a bound is the
    mean over ``zs`` of log p(x | z).  If beam search finds nothing better
    than ``x`` itself, ``x`` is kept, so the bound never goes down.
    """
    d = params.dims
    content = np.zeros(d.V, dtype=bool)
    content[N_RESERVED:] = True
    forced = np.where(missing, -1, x)
    scorer = make_scorer(params, zs)
    before = score_sequence(scorer, x)
    beam = beam_search(scorer, d.L, d.V, K, forced=forced, free_tokens=content)
    cand, after = beam.prefixes[0], float(beam.scores[0])
    if after < before:
        cand, after = np.array(x), before
    return cand, before, after


def impute(task: ImputationTask, params: ModelParams, K: int = 15, seed: int = 0) -> ImputationResult:
    """Fill the missing words by alternating posterior sampling of z with a
    beam-search maximisation of the mean log-likelihood over the samples.

    Observed slots are pinned; missing slots range over content words.  The
    M-like step keeps the incoming completion if search does not improve on
    it.  Each restart stops when the completion repeats or after
    ``max_iters``; the restart with the highest bound wins.
    """
    d = params.dims
    rng = rng_stream(seed, "impute")

    if not task.missing.any():
        zs = _draw_z(task.ids, params, rng.standard_normal((task.samples, d.Dz)))
        bound = score_sequence(make_scorer(params, zs), task.ids)
        return ImputationResult(EncodedSentence.from_ids(task.ids), bound, [], [bound])

    best = None
    result = ImputationResult(None, -np.inf)
    for _ in range(task.restarts):
        x = task.ids.copy()
        x[task.missing] = rng.integers(N_RESERVED, d.V, size=int(task.missing.sum()))
        steps = []
        bound = -np.inf
        for _ in range(task.max_iters):
            zs = _draw_z(x, params, rng.standard_normal((task.samples, d.Dz)))
            cand, before, after = m_like_step(x, task.missing, zs, params, K)
            steps.append((before, after))
            bound = after
            if np.array_equal(cand, x):
                break
            x = cand
        result.history.append(steps)
        result.restart_bounds.append(bound)
        if best is None or bound > best[1]:
            best = (x.copy(), bound)
    result.completion = EncodedSentence.from_ids(best[0])
    result.bound = best[1]
    return result


def mask_sentence(sentence: EncodedSentence, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Missing mask over the content words of a sentence (never EOS/PAD).

    round(fraction * n_words) words are hidden, at least one, and at least
    one word stays visible when the sentence has two or more words.
    """
    n = sentence.true_length - 1
    k = int(round(fraction * n))
    k = max(1, k) if n else 0
    if n >= 2:
        k = min(k, n - 1)
    missing = np.zeros(sentence.L, dtype=bool)
    if k:
        missing[rng.choice(n, size=k, replace=False)] = True
    return missing


# -------------------------------------------------------------- latent space


def interpolate(z1, z2, alphas: Sequence[float], params: ModelParams, K: int = 15):
    """Decode alpha * z1 + (1 - alpha) * z2 for every alpha."""
    z1 = np.asarray(nx.as_tensor(z1).data)
    z2 = np.asarray(nx.as_tensor(z2).data)
    out = []
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [0, 1]")
        z = (a * z1 + (1.0 - a) * z2).astype(z1.dtype)
        out.append((a, beam_decode(z, params, K)[0]))
    return out


def score_pool(z, pool: Sequence[EncodedSentence], params: ModelParams) -> np.ndarray:
    with nx.no_grad():
        zt = nx.as_tensor(np.asarray(z).reshape(1, -1))
        return np.asarray(decoder_logprob(params, zt, stack_ids(pool)).data, dtype=np.float64)


def nearest_sentence(query, pool: Sequence[EncodedSentence], params: ModelParams):
    """argmax over ``pool`` of log p(x | z = posterior mean of query).

    ``pool`` must not contain the query entry itself.  Ties go to the
    lexicographically smallest id sequence.  Returns (sentence, score).
    """
    if not pool:
        raise ValueError("empty pool")
    mu, _ = posterior(query, params)
    scores = score_pool(mu[0], pool, params)
    top = np.flatnonzero(scores == scores.max())
    best = min(top, key=lambda i: pool[i].ids)
    return pool[best], float(scores[best])


# ------------------------------------------------------------------- traces


@dataclass
class TraceRow:
    t: int
    sentence: EncodedSentence
    attention: np.ndarray  # (L,)


def export_trace(z, params: ModelParams, K: int = 15) -> list[TraceRow]:
    """Decode the canvas after every writer step as if it were final."""
    if params.dims.decoder != "autr":
        raise ValueError("traces need the AUTR decoder")
    z = np.asarray(nx.as_tensor(z).data).reshape(1, -1)
    with nx.no_grad():
        _, tr = run_writer(nx.Tensor(z), params, trace=True)
    rows = []
    for t, state in enumerate(tr.canvases, 1):
        sent, _ = beam_decode(z[0], params, K, canvas=state.canvas.data)
        rows.append(TraceRow(t, sent, state.cumulative_attention.data[0].copy()))
    return rows


def format_trace(rows: Sequence[TraceRow], vocab: Vocabulary) -> str:
    lines = []
    for r in rows:
        att = ",".join(f"{a:.6f}" for a in r.attention)
        lines.append(f"{r.t}\t{' '.join(decode(r.sentence, vocab))}\t{att}\n")
    return "".join(lines)


def heatmap_ppm(rows: Sequence[TraceRow]) -> bytes:
    """Binary PPM (P6), width L and height T, grey level 255 * attention."""
    att = np.stack([r.attention for r in rows])
    grey = np.clip(np.rint(255.0 * att.astype(np.float64)), 0, 255).astype(np.uint8)
    T, L = grey.shape
    rgb = np.repeat(grey[..., None], 3, axis=-1)
    return f"P6\n{L} {T}\n255\n".encode("ascii") + rgb.tobytes()
