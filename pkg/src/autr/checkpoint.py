"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"AUTR"  u32 version
    u32 n    n bytes of UTF-8 config text (``key = value`` lines)
    tensor block: parameters
    u64 optimizer step
    tensor block: optimizer moments, named ``m/<param>`` and ``v/<param>``

A tensor block is ``u32 count`` followed by, per tensor, ``u32 name_len``,
the name, ``u32 rank``, ``rank`` x ``u32`` dims and the row-major float32
data.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_kv
from .data import Vocabulary
from .numerics import Tensor
from .params import ModelParams

MAGIC = b"AUTR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        items = params.items()
        return cls({n: np.zeros_like(t.data) for n, t in items},
                   {n: np.zeros_like(t.data) for n, t in params.items()})


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ModelParams
    opt_state: OptimizerState
    iteration: int
    vocab_path: str = ""
    vocab: Vocabulary | None = field(default=None, repr=False, compare=False)
    version: int = FORMAT_VERSION

    def save(self, path) -> None:
        path = Path(path)
        if self.vocab is not None and not self.vocab_path:
            self.vocab_path = path.with_suffix(".vocab.tsv").name
        if self.vocab is not None:
            self.vocab.save(path.parent / self.vocab_path)
        path.write_bytes(dumps(self))

    @classmethod
    def load(cls, path, with_vocab: bool = True) -> "Checkpoint":
        path = Path(path)
        ckpt = loads(path.read_bytes())
        if with_vocab and ckpt.vocab_path:
            vpath = Path(ckpt.vocab_path)
            if not vpath.is_absolute():
                vpath = path.parent / vpath
            ckpt.vocab = Vocabulary.load(vpath)
        return ckpt


def _write_tensors(buf: io.BytesIO, tensors: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensors(buf: io.BytesIO) -> dict[str, np.ndarray]:
    out = {}
    (count,) = _unpack(buf, "<I")
    for _ in range(count):
        (n,) = _unpack(buf, "<I")
        name = _take(buf, n).decode("utf-8")
        (rank,) = _unpack(buf, "<I")
        shape = _unpack(buf, f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(_take(buf, 4 * size), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(shape)
    return out


def _take(buf: io.BytesIO, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw


def _unpack(buf: io.BytesIO, fmt: str):
    return struct.unpack(fmt, _take(buf, struct.calcsize(fmt)))


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta = (ckpt.config.to_text() + f"V = {ckpt.params.dims.V}\n"
            f"iteration = {ckpt.iteration}\nvocab_file = {ckpt.vocab_path}\n")
    raw = meta.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    _write_tensors(buf, ckpt.params.as_dict())
    st = ckpt.opt_state
    buf.write(struct.pack("<Q", st.step))
    moments = {f"m/{k}": v for k, v in st.m.items()}
    moments.update({f"v/{k}": v for k, v in st.v.items()})
    _write_tensors(buf, moments)
    return buf.getvalue()


def loads(blob: bytes) -> Checkpoint:
    buf = io.BytesIO(blob)
    if _take(buf, 4) != MAGIC:
        raise CheckpointError("not an AUTR checkpoint (bad magic)")
    (version,) = _unpack(buf, "<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = _unpack(buf, "<I")
    kv = parse_kv(_take(buf, n).decode("utf-8"), "<checkpoint>", strict=False)
    V = int(kv.pop("V"))
    iteration = int(kv.pop("iteration"))
    vocab_path = kv.pop("vocab_file", "")
    config = TrainConfig(**kv)
    arrays = _read_tensors(buf)
    params = ModelParams(config.dims(V), {k: Tensor(a, requires_grad=True, name=k)
                                          for k, a in arrays.items()})
    (step,) = _unpack(buf, "<Q")
    moments = _read_tensors(buf)
    m = {k[2:]: a for k, a in moments.items() if k.startswith("m/")}
    v = {k[2:]: a for k, a in moments.items() if k.startswith("v/")}
    return Checkpoint(config, params, OptimizerState(m, v, step), iteration, vocab_path,
                      version=version)
