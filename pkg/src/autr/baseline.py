"""Gen-RNN baseline decoder: an LSTM that emits one word per step.

Step l reads [z ; e(x_{l-1})] with a zero vector standing in for the word
before position 1.  Word dropout swaps input embeddings for e(UNK).
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .data import UNK
from .encoder import as_id_matrix
from .numerics import Tensor
from .params import ModelParams, lstm_cell, lstm_cell_np, log_softmax_np, rowwise_matmul


def _inputs(z: Tensor, ids: np.ndarray, params: ModelParams, dropout_mask) -> Tensor:
    B, L = ids.shape
    prev = ids[:, :-1]
    if dropout_mask is not None:
        prev = np.where(np.asarray(dropout_mask, bool)[:, :-1], UNK, prev)
    emb = nx.gather_rows(params.decoder_embed(), prev)  # B x (L-1) x E
    bos = Tensor(np.zeros((B, 1, params.dims.E), dtype=params.dtype))
    words = nx.concat([bos, emb], axis=1)
    zs = z.reshape(z.shape[0], 1, z.shape[1]) + np.zeros((1, L, 1), dtype=z.dtype)
    if zs.shape[0] != B:
        zs = zs + np.zeros((B, 1, 1), dtype=z.dtype)
    return nx.concat([zs, words], axis=-1)


def baseline_logprob(z, x, params: ModelParams, dropout_mask=None) -> Tensor:
    """log p(x | z) under the LSTM decoder, summed over all L positions.

    ``dropout_mask[b, l]`` marks word l as dropped, which affects the input
    of step l + 1.
    """
    single = nx.as_tensor(z).ndim == 1 and as_id_matrix(x).shape[0] == 1
    out = nx.sum_(position_logprobs(z, x, params, dropout_mask), axis=-1)
    return out.reshape(()) if single else out


def position_logprobs(z, x, params: ModelParams, dropout_mask=None) -> Tensor:
    """Per-position log-probabilities of the observed ids, shape (B, L)."""
    zt = nx.as_tensor(z)
    zt = zt.reshape(1, -1) if zt.ndim == 1 else zt
    ids = as_id_matrix(x)
    B, L = ids.shape
    H = params.dims.H
    inp = _inputs(zt, ids, params, dropout_mask)
    h = Tensor(np.zeros((B, H), dtype=params.dtype))
    c = Tensor(np.zeros((B, H), dtype=params.dtype))
    hs = []
    for l in range(L):
        h, c = lstm_cell(inp[:, l], h, c, params["base_W"], params["base_U"], params["base_b"])
        hs.append(h)
    logits = nx.stack(hs, axis=1) @ params["out_W"] + params["out_b"]
    return nx.pick(nx.log_softmax(logits), ids)


class BaselineScorer:
    """Incremental scorer carrying LSTM state per hypothesis (and per z row)."""

    def __init__(self, params: ModelParams, z):
        z = nx.as_tensor(z).data
        self.z = z[None] if z.ndim == 1 else z
        self.embed = params.decoder_embed().data
        self.W, self.U, self.b = (params[k].data for k in ("base_W", "base_U", "base_b"))
        self.out_W, self.out_b = params["out_W"].data, params["out_b"].data
        self.H = params.dims.H

    def _step(self, words: np.ndarray, h: np.ndarray, c: np.ndarray):
        S, n = h.shape[:2]
        zs = np.broadcast_to(self.z[:, None, :], (S, n, self.z.shape[1]))
        x = np.concatenate([zs, np.broadcast_to(words, (S, n, words.shape[-1]))], axis=-1)
        return lstm_cell_np(x, h, c, self.W, self.U, self.b)

    def start(self):
        S = self.z.shape[0]
        zeros = np.zeros((S, 1, self.H), dtype=self.z.dtype)
        bos = np.zeros((1, self.embed.shape[1]), dtype=self.z.dtype)
        return self._step(bos, zeros, zeros)

    def logprobs(self, state, l: int) -> np.ndarray:
        h, _ = state
        return log_softmax_np(rowwise_matmul(h, self.out_W) + self.out_b).mean(axis=0)

    def extend(self, state, parents: np.ndarray, tokens: np.ndarray):
        h, c = state
        return self._step(self.embed[tokens], h[:, parents], c[:, parents])
