"""Training configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from zlib import crc32

import numpy as np

from .params import DECODERS, Dims


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults are the full-scale (20k vocabulary, 40-word) setting."""

    decoder: str = "autr"
    L: int = 40
    E: int = 300
    T: int = 30
    H: int = 500
    Dz: int = 50
    R: int = 300
    vocab_size: int = 20000
    lr: float = 1e-4
    batch_size: int = 200
    iterations: int = 1_000_000
    anneal_end: int = 20_000
    dropout: float = 0.0
    seed: int = 0
    eval_samples: int = 1000
    clip_norm: float = 0.0
    log_every: int = 100
    checkpoint_every: int = 5000
    share_embeddings: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        for k in ("L", "E", "T", "H", "Dz", "R", "vocab_size", "batch_size",
                  "iterations", "eval_samples", "log_every", "checkpoint_every"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must leave room for the reserved tokens")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.anneal_end <= self.iterations:
            raise ValueError("anneal_end must lie in [0, iterations]")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")

    @classmethod
    def full_scale(cls, decoder: str = "autr") -> "TrainConfig":
        return cls(decoder=decoder, T=30 if decoder == "autr" else 40,
                   dropout=0.3 if decoder == "baseline" else 0.0)

    @classmethod
    def toy(cls, decoder: str = "autr", **overrides) -> "TrainConfig":
        base = dict(decoder=decoder, L=10, E=32, T=8, H=64, Dz=16, R=32, vocab_size=50,
                    lr=2e-3, batch_size=32, iterations=5000, anneal_end=4000,
                    eval_samples=10, log_every=100, checkpoint_every=1000)
        base.update(overrides)
        return cls(**base)

    def dims(self, V: int) -> Dims:
        return Dims(V=V, L=self.L, E=self.E, T=self.T, H=self.H, Dz=self.Dz, R=self.R,
                    decoder=self.decoder, share_embeddings=self.share_embeddings)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text form

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        return cls(**parse_kv(text, source, strict=True))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(key: str, raw: str):
    kind = _TYPES[key]
    if kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def parse_kv(text: str, source: str = "<config>", strict: bool = True) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _TYPES:
            if strict:
                raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
            out[key] = value
            continue
        out[key] = coerce(key, value)
    return out


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose (shuffle, eps, dropout...)."""
    return np.random.default_rng([seed, crc32(name.encode())])
