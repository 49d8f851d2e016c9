"""Gaussian variational posterior q(z|x) with reparametrized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import EncodedSentence, stack_ids
from .numerics import Tensor
from .params import ModelParams, lstm_cell

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class PosteriorParams:
    mu: Tensor
    logvar: Tensor


@dataclass
class LatentSample:
    z: Tensor
    eps: np.ndarray
    source: PosteriorParams | None  # None means the N(0, I) prior


def as_id_matrix(x) -> np.ndarray:
    """Accept one EncodedSentence, a list of them, or an integer array and
    return a 2-D id matrix."""
    if isinstance(x, EncodedSentence):
        return np.array([x.ids], dtype=np.int64)
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], EncodedSentence):
        return stack_ids(x)
    ids = np.asarray(x, dtype=np.int64)
    return ids[None, :] if ids.ndim == 1 else ids


def encode(x, params: ModelParams) -> PosteriorParams:
    """Run the encoder LSTM over all L positions (PAD included) and map the
    final hidden state to mean and clamped log-variance."""
    ids = as_id_matrix(x)
    B, L = ids.shape
    H = params.dims.H
    emb = nx.gather_rows(params["embed"], ids)
    h = nx.Tensor(np.zeros((B, H), dtype=params.dtype))
    c = nx.Tensor(np.zeros((B, H), dtype=params.dtype))
    for l in range(L):
        h, c = lstm_cell(emb[:, l], h, c, params["enc_W"], params["enc_U"], params["enc_b"])
    hid = nx.tanh(h @ params["enc_hid_W"] + params["enc_hid_b"])
    mu = hid @ params["enc_mu_W"] + params["enc_mu_b"]
    logvar = clamp_logvar(hid @ params["enc_lv_W"] + params["enc_lv_b"])
    return PosteriorParams(mu, logvar)


def clamp_logvar(raw: Tensor) -> Tensor:
    return nx.clip(raw, LOGVAR_MIN, LOGVAR_MAX)


def sample_z(p: PosteriorParams, eps) -> LatentSample:
    """z = mu + exp(logvar / 2) * eps."""
    eps = np.asarray(eps, dtype=p.mu.dtype)
    z = p.mu + nx.exp(p.logvar * 0.5) * eps
    return LatentSample(z, eps, p)


def prior_sample(eps, dtype=None) -> LatentSample:
    eps = np.asarray(eps, dtype=dtype or nx.default_dtype())
    return LatentSample(Tensor(eps.copy()), eps, None)


def kl_gaussian(p: PosteriorParams) -> Tensor:
    """KL(q || N(0, I)) summed over latent dimensions, one value per row."""
    terms = nx.square(p.mu) + nx.exp(p.logvar) - 1.0 - p.logvar
    return nx.sum_(terms, axis=-1) * 0.5
