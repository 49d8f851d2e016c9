"""AUTR generative network: the canvas writer and the word emission model.

The writer runs T LSTM steps from z.  At every step it picks how strongly to
write into each of the L canvas slots with a cumulative-attention gate (each
slot's lifetime write budget is 1) and blends fresh content into the canvas.
Words are then emitted left to right: position l is scored against the final
canvas slot plus a z-weighted average of the embeddings of earlier words.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import UNK
from .encoder import as_id_matrix
from .numerics import ContractError, Tensor
from .params import ModelParams, lstm_cell, log_softmax_np, rowwise_matmul

# slots whose remaining budget is at or below this are treated as saturated
SATURATION_TOL = 1e-9


@dataclass
class CanvasState:
    canvas: Tensor  # (..., L, E)
    cumulative_attention: Tensor  # (..., L)


@dataclass
class WriterTrace:
    gates: list[Tensor] = field(default_factory=list)
    canvases: list[CanvasState] = field(default_factory=list)
    hidden: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.gates)

    def attention_matrix(self) -> np.ndarray:
        """Cumulative attention after each step, shape (T, ..., L)."""
        return np.stack([c.cumulative_attention.data for c in self.canvases])


def _as_latent(z) -> Tensor:
    z = z if isinstance(z, Tensor) else nx.as_tensor(z)
    return z.reshape(1, -1) if z.ndim == 1 else z


def gate_attention(logits, cumulative) -> Tensor:
    """Write strengths g_l = softmax(a + log s)_l * s_l with s = 1 - cumulative.

    Saturated slots get exactly zero; when every slot is saturated the whole
    gate is zero.
    """
    logits = nx.as_tensor(logits)
    cumulative = nx.as_tensor(cumulative)
    remaining = 1.0 - cumulative
    active = remaining.data > SATURATION_TOL
    s = remaining * active
    mask = active | ~active.any(axis=-1, keepdims=True)
    return nx.softmax(logits + nx.log(s), mask=mask) * s


def canvas_update(canvas_prev, gate, update) -> Tensor:
    """(1 - g) * C + g * U with the per-slot gate broadcast over embeddings."""
    g = nx.as_tensor(gate)
    g = g.reshape(g.shape + (1,))
    return (1.0 - g) * canvas_prev + g * update


def initial_state(batch: int, params: ModelParams):
    d, dt = params.dims, params.dtype
    zeros = lambda *s: Tensor(np.zeros(s, dtype=dt))
    canvas = CanvasState(zeros(batch, d.L, d.E), zeros(batch, d.L))
    return zeros(batch, d.H), zeros(batch, d.H), canvas


def writer_step(z, h_prev, c_prev, state: CanvasState, params: ModelParams):
    """h^t = LSTM([z ; read(C^{t-1})]), then gate and canvas update."""
    z = _as_latent(z)
    d = params.dims
    B = state.canvas.shape[0]
    read = state.canvas.reshape(B, d.L * d.E) @ params["read_W"]
    h, c = lstm_cell(nx.concat([z, read], axis=-1), h_prev, c_prev,
                     params["wr_W"], params["wr_U"], params["wr_b"])
    gate = gate_attention(h @ params["gate_W"], state.cumulative_attention)
    update = (h @ params["update_W"]).reshape(B, d.L, d.E)
    canvas = canvas_update(state.canvas, gate, update)
    return h, c, CanvasState(canvas, state.cumulative_attention + gate), gate


def run_writer(z, params: ModelParams, T: int | None = None, trace: bool = False):
    """T writer steps from the zero state; returns (final CanvasState, trace)."""
    z = _as_latent(z)
    T = params.dims.T if T is None else T
    if T < 1:
        raise ValueError("T must be >= 1")
    h, c, state = initial_state(z.shape[0], params)
    tr = WriterTrace() if trace else None
    for _ in range(T):
        h, c, state, gate = writer_step(z, h, c, state, params)
        if tr is not None:
            tr.gates.append(gate)
            tr.canvases.append(state)
            tr.hidden.append(h)
    return state, tr


# ------------------------------------------------------------------ emission


def context_weight_matrix(z, params: ModelParams) -> Tensor:
    """Row l holds the weights over positions < l (row 0 is all zero).

    A single matrix maps z to L logits; each row is the softmax of those
    logits restricted to the earlier positions.
    """
    z = _as_latent(z)
    L = params.dims.L
    logits = (z @ params["ctx_W"]).reshape(z.shape[0], 1, L)
    if L == 1:
        return Tensor(np.zeros((z.shape[0], 1, 1), dtype=logits.dtype))
    earlier = np.tril(np.ones((L - 1, L), dtype=bool))
    rows = nx.softmax(logits + np.zeros((L - 1, L), dtype=logits.dtype), mask=earlier)
    zero_row = Tensor(np.zeros((z.shape[0], 1, L), dtype=logits.dtype))
    return nx.concat([zero_row, rows], axis=1)


def context_weights(z, l: int, params: ModelParams) -> Tensor:
    """Weights over positions 1..l-1 for (1-based) position l >= 2."""
    if l < 2:
        raise ContractError("context weights need l >= 2; position 1 uses a zero context")
    if l > params.dims.L:
        raise ContractError(f"position {l} exceeds L={params.dims.L}")
    z = nx.as_tensor(z)
    W = context_weight_matrix(z, params)
    row = W[0, l - 1, : l - 1] if z.ndim == 1 else W[:, l - 1, : l - 1]
    return row


def _logits_from_context(z, canvas, ctx, params: ModelParams) -> Tensor:
    E = params.dims.E
    b = canvas + ctx @ params["x_W"] + (z @ params["z_W"]).reshape(z.shape[0], 1, E)
    return b @ nx.transpose(params["embed"])


def emission_table(z, canvas, ids, params: ModelParams, dropout_mask=None) -> Tensor:
    """Log-probabilities over the vocabulary at every position, (B, L, V)."""
    z = _as_latent(z)
    ids = as_id_matrix(ids)
    ctx_ids = ids if dropout_mask is None else np.where(np.asarray(dropout_mask, bool), UNK, ids)
    emb = nx.gather_rows(params["embed"], ctx_ids)
    ctx = context_weight_matrix(z, params) @ emb
    return nx.log_softmax(_logits_from_context(z, canvas, ctx, params))


def emission_logprobs(z, canvas_slot, prev_ids, l: int, params: ModelParams) -> Tensor:
    """Log p(x_l = . | z, x_{<l}, C_l) for one (1-based) position, shape (V,)."""
    prev_ids = np.asarray(prev_ids, dtype=np.int64)
    if len(prev_ids) != l - 1:
        raise ContractError(f"position {l} needs {l - 1} previous ids, got {len(prev_ids)}")
    z = _as_latent(z)
    if l == 1:
        ctx = Tensor(np.zeros((1, 1, params.dims.E), dtype=params.dtype))
    else:
        w = context_weights(z, l, params).reshape(1, 1, l - 1)
        ctx = w @ nx.gather_rows(params["embed"], prev_ids).reshape(1, l - 1, params.dims.E)
    slot = nx.as_tensor(canvas_slot).reshape(1, 1, params.dims.E)
    return nx.log_softmax(_logits_from_context(z, slot, ctx, params)).reshape(params.dims.V)


def sentence_logprob(z, x, params: ModelParams, dropout_mask=None, canvas=None) -> Tensor:
    """log p(x | z) summed over all L positions, PAD included.

    ``dropout_mask`` (bool, same shape as the ids) replaces the marked words
    by UNK in the context average only; targets are untouched.  Returns a
    vector with one entry per sentence, or a scalar when both ``z`` and ``x``
    describe a single sentence.
    """
    single = nx.as_tensor(z).ndim == 1 and as_id_matrix(x).shape[0] == 1
    out = nx.sum_(position_logprobs(z, x, params, dropout_mask, canvas), axis=-1)
    return out.reshape(()) if single else out


def position_logprobs(z, x, params: ModelParams, dropout_mask=None, canvas=None) -> Tensor:
    """Per-position log-probabilities of the observed ids, shape (B, L)."""
    z = _as_latent(z)
    ids = as_id_matrix(x)
    if canvas is None:
        canvas = run_writer(z, params)[0].canvas
    lp = emission_table(z, canvas, ids, params, dropout_mask)
    return nx.pick(lp, np.broadcast_to(ids, lp.shape[:-1]))


# --------------------------------------------------------- incremental scoring


class AutrScorer:
    """Incremental scorer for search: fixes the canvas from each z, then
    scores prefixes position by position.

    With several z rows, ``logprobs`` returns the mean over them.
    """

    def __init__(self, params: ModelParams, z, canvas=None):
        with nx.no_grad():
            zt = _as_latent(z)
            if canvas is None:
                canvas = run_writer(zt, params)[0].canvas
            canvas = nx.as_tensor(canvas).data
            if canvas.ndim == 2:
                canvas = canvas[None]
            self.W = context_weight_matrix(zt, params).data
            self.base = canvas + (zt.data @ params["z_W"].data)[:, None, :]
        self.embed = params["embed"].data
        self.x_W = params["x_W"].data

    def start(self) -> np.ndarray:
        return np.zeros((1, 0), dtype=np.int64)

    def logprobs(self, prefixes: np.ndarray, l: int) -> np.ndarray:
        S = self.base.shape[0]
        n = prefixes.shape[0]
        if l == 0:
            ctx = np.zeros((S, n, self.embed.shape[1]), dtype=self.base.dtype)
        else:
            ctx = np.einsum("sk,nke->sne", self.W[:, l, :l], self.embed[prefixes])
        b = self.base[:, l][:, None, :] + rowwise_matmul(ctx, self.x_W)
        return log_softmax_np(rowwise_matmul(b, self.embed.T)).mean(axis=0)

    def extend(self, prefixes: np.ndarray, parents: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        return np.concatenate([prefixes[parents], tokens[:, None]], axis=1)
