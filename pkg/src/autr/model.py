"""Dispatch between the two decoders."""

from __future__ import annotations

from . import baseline, writer
from .baseline import BaselineScorer, baseline_logprob
from .params import ModelParams
from .writer import AutrScorer, sentence_logprob


def decoder_logprob(params: ModelParams, z, x, dropout_mask=None):
    if params.dims.decoder == "autr":
        return sentence_logprob(z, x, params, dropout_mask)
    return baseline_logprob(z, x, params, dropout_mask)


def decoder_position_logprobs(params: ModelParams, z, x, dropout_mask=None):
    """(B, L) log-probabilities of each observed id; rows sum to decoder_logprob."""
    mod = writer if params.dims.decoder == "autr" else baseline
    return mod.position_logprobs(z, x, params, dropout_mask)


def make_scorer(params: ModelParams, z, canvas=None):
    if params.dims.decoder == "autr":
        return AutrScorer(params, z, canvas=canvas)
    if canvas is not None:
        raise ValueError("the baseline decoder has no canvas")
    return BaselineScorer(params, z)


def parameter_report(params: ModelParams) -> dict[str, int]:
    """Parameter counts split into embeddings, encoder and decoder."""
    total = params.count()
    emb = params.count("embed")
    enc = params.count("enc_")
    return {"total": total, "embeddings": emb, "encoder": enc, "decoder": total - emb - enc}
