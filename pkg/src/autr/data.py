"""Corpus ingestion, vocabulary, fixed-length encoding and batching.

Sentences are pre-tokenized text, one per line, tokens separated by
whitespace.  No lowercasing or other normalization is applied.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, EOS, UNK = 0, 1, 2
PAD_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<eos>", "<unk>"
RESERVED = (PAD_TOKEN, EOS_TOKEN, UNK_TOKEN)
N_RESERVED = len(RESERVED)


class IngestionError(ValueError):
    pass


class LengthError(ValueError):
    pass


class Vocabulary:
    """Bidirectional token/id map with PAD=0, EOS=1, UNK=2."""

    def __init__(self, tokens: Sequence[str], max_size: int | None = None):
        tokens = list(tokens)
        if tuple(tokens[:N_RESERVED]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.max_size = max_size if max_size is not None else len(tokens)
        if len(tokens) > self.max_size:
            raise ValueError(f"{len(tokens)} tokens exceed max_size {self.max_size}")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, i: int) -> str:
        return self.itos[i]

    @property
    def content_ids(self) -> np.ndarray:
        return np.arange(N_RESERVED, len(self), dtype=np.int64)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, t in enumerate(self.itos):
                f.write(f"{t}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, idx = line.rpartition("\t")
                if not tok or int(idx) != len(tokens):
                    raise IngestionError(f"{path}:{lineno}: expected id {len(tokens)}")
                tokens.append(tok)
        return cls(tokens)


def tokenize(line: str) -> list[str]:
    return line.split()


def read_corpus(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [toks for toks in map(tokenize, f) if toks]


def write_corpus(path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(" ".join(s) + "\n")


def _as_tokens(sentence) -> list[str]:
    return tokenize(sentence) if isinstance(sentence, str) else list(sentence)


def build_vocab(corpus: Iterable, max_size: int) -> Vocabulary:
    """Keep the ``max_size - 3`` most frequent tokens; ties go to the
    lexicographically smaller token."""
    if max_size < N_RESERVED:
        raise ValueError(f"max_size must be at least {N_RESERVED}")
    counts: Counter[str] = Counter()
    n = 0
    for sentence in corpus:
        counts.update(t for t in _as_tokens(sentence) if t not in RESERVED)
        n += 1
    if n == 0:
        raise IngestionError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, _ in ranked[: max_size - N_RESERVED]]
    return Vocabulary(list(RESERVED) + kept, max_size=max_size)


@dataclass(frozen=True)
class EncodedSentence:
    ids: tuple[int, ...]
    true_length: int

    def __post_init__(self):
        ids, n = self.ids, self.true_length
        if not 1 <= n <= len(ids) or ids[n - 1] != EOS:
            raise ValueError(f"malformed sentence {ids} (true_length={n})")
        if any(i == PAD or i == EOS for i in ids[: n - 1]) or any(i != PAD for i in ids[n:]):
            raise ValueError(f"malformed sentence {ids} (true_length={n})")

    @property
    def L(self) -> int:
        return len(self.ids)

    @classmethod
    def from_ids(cls, ids: Sequence[int]) -> "EncodedSentence":
        ids = tuple(int(i) for i in ids)
        return cls(ids, ids.index(EOS) + 1 if EOS in ids else 0)


def encode(tokens: Sequence[str], vocab: Vocabulary, L: int) -> EncodedSentence:
    tokens = _as_tokens(tokens)
    if len(tokens) > L - 1:
        raise LengthError(f"sentence of {len(tokens)} tokens does not fit L={L} with EOS")
    ids = [vocab.id(t) for t in tokens] + [EOS]
    n = len(ids)
    return EncodedSentence(tuple(ids + [PAD] * (L - n)), n)


def decode(sentence, vocab: Vocabulary) -> list[str]:
    """Tokens up to (not including) the first EOS."""
    ids = sentence.ids if isinstance(sentence, EncodedSentence) else sentence
    out = []
    for i in ids:
        if i == EOS:
            break
        out.append(vocab.token(int(i)))
    return out


def encode_corpus(corpus: Iterable, vocab: Vocabulary, L: int,
                  drop_long: bool = True) -> list[EncodedSentence]:
    out = []
    for s in corpus:
        toks = _as_tokens(s)
        if drop_long and len(toks) > L - 1:
            continue
        out.append(encode(toks, vocab, L))
    return out


def stack_ids(sentences: Sequence[EncodedSentence]) -> np.ndarray:
    return np.array([s.ids for s in sentences], dtype=np.int64)


def split_corpus(corpus: Sequence, train_fraction: float = 0.9, seed: int = 0):
    """Seeded disjoint, exhaustive train/test split."""
    order = np.random.default_rng(seed).permutation(len(corpus))
    cut = int(round(train_fraction * len(corpus)))
    return [corpus[i] for i in sorted(order[:cut])], [corpus[i] for i in sorted(order[cut:])]


@dataclass
class Batch:
    sentences: list[EncodedSentence]
    rng_seed: int
    ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("empty batch")
        if len({s.L for s in self.sentences}) != 1:
            raise ValueError("batch mixes sentence lengths")
        self.ids = stack_ids(self.sentences)

    def __len__(self) -> int:
        return len(self.sentences)


def batch_iter(corpus: Sequence[EncodedSentence], batch_size: int, seed: int,
               epochs: int | None = 1) -> Iterator[Batch]:
    """Shuffled mini-batches; the final partial batch of each epoch is kept.

    ``epochs=None`` cycles forever.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            yield Batch([corpus[i] for i in chunk], int(rng.integers(2**32)))
        epoch += 1
        if len(corpus) == 0:
            return


# ------------------------------------------------------------- synthetic text

_POOLS = {
    "noun": "cat dog bird fox horse child king girl man woman farmer sailor "
            "doctor baker teacher wolf bear mouse owl queen".split(),
    "verb": "sees likes finds follows helps feeds calls meets watches chases "
            "loves paints".split(),
    "adj": "big small red old young happy quiet brave green tall".split(),
    "prep": "near with behind under beside".split(),
}
_DETS = ["the", "a"]


def _word_pools(n_content: int) -> dict[str, list[str]]:
    fixed = len(_DETS) + 1
    rest = n_content - fixed
    shares = {"noun": 0.4, "verb": 0.25, "adj": 0.2, "prep": 0.15}
    sizes = {k: max(1, int(rest * v)) for k, v in shares.items()}
    sizes["noun"] += rest - sum(sizes.values())
    pools = {"det": list(_DETS), "end": ["."]}
    for k, n in sizes.items():
        base = _POOLS[k]
        pools[k] = [base[i] if i < len(base) else f"{base[i % len(base)]}{i // len(base)}"
                    for i in range(n)]
    return pools


def synth_corpus(grammar_seed: int, n: int, vocab_size: int, max_len: int) -> list[list[str]]:
    """Seeded subject-verb-object sentences over at most ``vocab_size - 3``
    distinct words, each of at most ``max_len`` tokens."""
    if vocab_size < 5:
        raise ValueError("vocab_size must be at least 5")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    rng = random.Random(grammar_seed)
    n_content = vocab_size - N_RESERVED
    if n_content < 9 or max_len < 5:
        words = [f"w{i}" for i in range(n_content)]
        return [[rng.choice(words) for _ in range(rng.randint(1, max_len))] for _ in range(n)]

    pools = _word_pools(n_content)

    def noun_phrase() -> list[str]:
        np_ = [rng.choice(pools["det"])]
        if rng.random() < 0.4:
            np_.append(rng.choice(pools["adj"]))
        return np_ + [rng.choice(pools["noun"])]

    out = []
    for _ in range(n):
        while True:
            s = noun_phrase() + [rng.choice(pools["verb"])] + noun_phrase()
            if rng.random() < 0.3:
                s += [rng.choice(pools["prep"])] + noun_phrase()
            s.append(".")
            if len(s) <= max_len:
                break
            if max_len < 7:
                s = s[: max_len - 1] + ["."]
                break
        out.append(s)
    return out
