"""Command-line entry point: ``python -m autr <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig, coerce, rng_stream
from .data import (EOS, PAD, EncodedSentence, Vocabulary, build_vocab, decode, encode,
                   encode_corpus, read_corpus, synth_corpus, tokenize, write_corpus)
from .decoding import (ImputationTask, export_trace, format_trace, heatmap_ppm, impute,
                       interpolate, nearest_sentence, posterior, reconstruct, sample_prior)
from .training import evaluate, train

log = logging.getLogger("autr")

# TrainConfig fields exposed as flags on `train`; flags beat config files
_CONFIG_FLAGS = ["decoder", "L", "E", "T", "H", "Dz", "R", "vocab_size", "lr", "batch_size",
                 "iterations", "anneal_end", "dropout", "eval_samples", "clip_norm",
                 "log_every", "checkpoint_every", "share_embeddings"]


class CliError(Exception):
    pass


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror or e}") from None


def _load_ckpt(path) -> Checkpoint:
    try:
        ck = Checkpoint.load(path)
    except OSError as e:
        raise CliError(f"cannot read {e.filename or path}: {e.strerror or e}") from None
    except CheckpointError as e:
        raise CliError(f"{path}: {e}") from None
    if ck.vocab is None:
        raise CliError(f"{path}: checkpoint has no vocabulary file")
    return ck


def _encode_line(line: str, ck: Checkpoint) -> EncodedSentence:
    return encode(tokenize(line), ck.vocab, ck.params.dims.L)


def _text(sentence, vocab: Vocabulary) -> str:
    return " ".join(decode(sentence, vocab))


def _emit(lines, out) -> None:
    text = "".join(f"{l}\n" for l in lines)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands


def cmd_synth(a) -> None:
    corpus = synth_corpus(a.seed, a.n, a.vocab_size, a.max_len)
    if a.out:
        write_corpus(a.out, corpus)
    else:
        _emit((" ".join(s) for s in corpus), None)


def cmd_vocab(a) -> None:
    corpus = [tokenize(l) for l in _read_lines(a.corpus)]
    vocab = build_vocab(corpus, a.max_size)
    vocab.save(a.out)
    log.info("wrote %d tokens to %s", len(vocab), a.out)


def _train_config(a) -> TrainConfig:
    if a.config:
        cfg = TrainConfig.from_text("\n".join(_read_lines(a.config)), a.config)
    elif a.preset == "toy":
        cfg = TrainConfig.toy()
    else:
        cfg = TrainConfig.full_scale()
    changes = {k: coerce(k, v) for k in _CONFIG_FLAGS
               if (v := getattr(a, k)) is not None}
    if a.seed is not None:
        changes["seed"] = a.seed
    return cfg.replace(**changes) if changes else cfg


def cmd_train(a) -> None:
    cfg = _train_config(a)
    if a.corpus:
        corpus = [tokenize(l) for l in _read_lines(a.corpus)]
    else:
        corpus = synth_corpus(cfg.seed, 32, cfg.vocab_size, cfg.L - 1)
        log.info("no --corpus given; training on a 32-sentence synthetic corpus")
    if a.vocab:
        try:
            vocab = Vocabulary.load(a.vocab)
        except OSError as e:
            raise CliError(f"cannot read {a.vocab}: {e.strerror or e}") from None
    else:
        vocab = build_vocab(corpus, cfg.vocab_size)
    sentences = encode_corpus(corpus, vocab, cfg.L)
    dropped = len(corpus) - len(sentences)
    if dropped:
        log.info("skipped %d sentences longer than %d tokens", dropped, cfg.L - 1)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = _load_ckpt(a.resume) if a.resume else None
    if resume is not None:
        cfg = resume.config.replace(iterations=cfg.iterations)
    cfg.save(out / "config.cfg")
    ck = train(cfg, sentences, vocab, out_dir=out, resume=resume)
    log.info("finished at iteration %d; checkpoint in %s", ck.iteration, out / "model.autr")


def cmd_eval(a) -> None:
    ck = _load_ckpt(a.ckpt)
    sents = [_encode_line(l, ck) for l in _read_lines(a.corpus) if len(tokenize(l)) < ck.params.dims.L]
    n = a.samples or ck.config.eval_samples
    res = evaluate(ck.params, sents, n, seed=a.seed)
    print(f"elbo={res['elbo']:.6f} kl={res['kl']:.6f} ppl={res['ppl']:.6f} "
          f"sentences={res['sentences']}")


def cmd_generate(a) -> None:
    ck = _load_ckpt(a.ckpt)
    _emit((_text(s, ck.vocab) for s in sample_prior(ck.params, a.n, a.beam, a.seed)), a.out)


def cmd_reconstruct(a) -> None:
    ck = _load_ckpt(a.ckpt)
    rng = rng_stream(a.seed, "eps")
    out = []
    for line in _read_lines(a.input):
        x = _encode_line(line, ck)
        eps = rng.standard_normal(ck.params.dims.Dz) if a.mode == "posterior-sample" else None
        out.append(_text(reconstruct(x, ck.params, a.mode, a.beam, eps=eps), ck.vocab))
    _emit(out, a.out)


def cmd_impute(a) -> None:
    ck = _load_ckpt(a.ckpt)
    L = ck.params.dims.L
    out = []
    for i, line in enumerate(_read_lines(a.input)):
        toks = tokenize(line)
        if not toks:
            out.append("")
            continue
        missing = np.zeros(L, dtype=bool)
        missing[:len(toks)] = [t == a.mask_token for t in toks]
        x = encode([ck.vocab.itos[3] if t == a.mask_token else t for t in toks], ck.vocab, L)
        task = ImputationTask(np.array(x.ids), missing, samples=a.samples,
                              max_iters=a.max_iters, restarts=a.restarts)
        res = impute(task, ck.params, K=a.beam, seed=a.seed + i)
        out.append(_text(res.completion, ck.vocab))
    _emit(out, a.out)


def _posterior_mean(line: str, ck: Checkpoint) -> np.ndarray:
    return posterior(_encode_line(line, ck), ck.params)[0][0]


def cmd_interpolate(a) -> None:
    ck = _load_ckpt(a.ckpt)
    z1, z2 = _posterior_mean(a.first, ck), _posterior_mean(a.second, ck)
    try:
        alphas = [float(x) for x in a.alphas.split(",")]
    except ValueError:
        raise CliError(f"--alphas: expected comma-separated numbers, got {a.alphas!r}") from None
    rows = interpolate(z1, z2, alphas, ck.params, a.beam)
    _emit((f"{alpha:g}\t{_text(s, ck.vocab)}" for alpha, s in rows), a.out)


def cmd_nearest(a) -> None:
    ck = _load_ckpt(a.ckpt)
    query = _encode_line(a.query, ck)
    pool = [_encode_line(l, ck) for l in _read_lines(a.pool)
            if tokenize(l) and len(tokenize(l)) < ck.params.dims.L]
    pool = [s for s in pool if s != query] if a.exclude_query else pool
    best, score = nearest_sentence(query, pool, ck.params)
    print(f"{score:.6f}\t{_text(best, ck.vocab)}")


def cmd_trace(a) -> None:
    ck = _load_ckpt(a.ckpt)
    if a.sentence is not None:
        z = _posterior_mean(a.sentence, ck)
    else:
        z = rng_stream(a.seed, "prior").standard_normal(ck.params.dims.Dz)
    rows = export_trace(z.astype(ck.params.dtype), ck.params, a.beam)
    Path(a.out).write_text(format_trace(rows, ck.vocab), encoding="utf-8")
    if a.ppm:
        Path(a.ppm).write_bytes(heatmap_ppm(rows))


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_, seed=False):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(fn=fn)
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="master random seed")
        return sp

    sp = add("synth", cmd_synth, "write a synthetic subject-verb-object corpus", seed=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--vocab-size", type=int, default=50)
    sp.add_argument("--max-len", type=int, default=9)
    sp.add_argument("--out")

    sp = add("vocab", cmd_vocab, "build a vocabulary TSV from a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--max-size", type=int, default=20000)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a model; writes model.autr, metrics.csv, config.cfg")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--corpus", help="one pre-tokenized sentence per line")
    sp.add_argument("--vocab", help="vocabulary TSV (default: built from the corpus)")
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--preset", choices=["full", "toy"], default="full",
                    help="defaults when no --config is given")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--seed", type=int, default=None, help="master random seed")
    for k in _CONFIG_FLAGS:
        sp.add_argument("--" + k.replace("_", "-"), dest=k, default=None, metavar="VALUE")

    sp = add("eval", cmd_eval, "multi-sample ELBO, KL and perplexity", seed=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--samples", type=int, default=None,
                    help="z samples per sentence (default: eval_samples from the checkpoint)")

    sp = add("generate", cmd_generate, "decode sentences from prior samples of z", seed=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--out")

    sp = add("reconstruct", cmd_reconstruct, "encode and re-decode sentences", seed=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--mode", choices=["posterior-mean", "posterior-sample"],
                    default="posterior-mean")
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--out")

    sp = add("impute", cmd_impute, "fill masked words", seed=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--input", required=True, help="sentences with masked words")
    sp.add_argument("--mask-token", default="__")
    sp.add_argument("--samples", type=int, default=5)
    sp.add_argument("--max-iters", type=int, default=20)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--out")

    sp = add("interpolate", cmd_interpolate, "decode along a line between two sentences' codes")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--from", dest="first", required=True, help="sentence decoded at alpha=1")
    sp.add_argument("--to", dest="second", required=True, help="sentence decoded at alpha=0")
    sp.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--out")

    sp = add("nearest", cmd_nearest, "most likely pool sentence under a query's code")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--pool", required=True)
    sp.add_argument("--exclude-query", action="store_true",
                    help="drop pool entries identical to the query")

    sp = add("trace", cmd_trace, "decode the canvas after each writer step", seed=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--sentence", help="use this sentence's posterior mean (default: prior draw)")
    sp.add_argument("--beam", type=int, default=15)
    sp.add_argument("--out", required=True, help="trace TSV")
    sp.add_argument("--ppm", help="optional attention heatmap")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except CliError as e:
        print(f"autr {args.command}: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"autr {args.command}: error: cannot access {e.filename}: {e.strerror}",
              file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"autr {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0
