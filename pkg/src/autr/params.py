"""Model dimensions, the parameter container and shared layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor

DECODERS = ("autr", "baseline")


@dataclass(frozen=True)
class Dims:
    """Sizes that fix every parameter shape.

    V vocabulary, L slots (sentence length incl. EOS/PAD), E embedding width,
    T writer steps, H hidden width (encoder, writer and baseline LSTMs),
    Dz latent width, R width of the canvas read projection.
    """

    V: int
    L: int
    E: int
    T: int
    H: int
    Dz: int
    R: int
    decoder: str = "autr"
    share_embeddings: bool = True

    def __post_init__(self):
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        for k in ("V", "L", "E", "T", "H", "Dz", "R"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")


def param_shapes(dims: Dims) -> dict[str, tuple[int, ...]]:
    V, L, E, H, Dz, R = dims.V, dims.L, dims.E, dims.H, dims.Dz, dims.R
    shapes = {
        "embed": (V, E),
        "enc_W": (E, 4 * H), "enc_U": (H, 4 * H), "enc_b": (4 * H,),
        "enc_hid_W": (H, H), "enc_hid_b": (H,),
        "enc_mu_W": (H, Dz), "enc_mu_b": (Dz,),
        "enc_lv_W": (H, Dz), "enc_lv_b": (Dz,),
    }
    if dims.decoder == "autr":
        shapes.update({
            "wr_W": (Dz + R, 4 * H), "wr_U": (H, 4 * H), "wr_b": (4 * H,),
            "read_W": (L * E, R),
            "gate_W": (H, L),
            "update_W": (H, L * E),
            "ctx_W": (Dz, L),
            "x_W": (E, E),
            "z_W": (Dz, E),
        })
    else:
        shapes.update({
            "base_W": (Dz + E, 4 * H), "base_U": (H, 4 * H), "base_b": (4 * H,),
            "out_W": (H, V), "out_b": (V,),
        })
        if not dims.share_embeddings:
            shapes["base_embed"] = (V, E)
    return shapes


class ModelParams:
    """Named learnable tensors plus the dimensions they were built for."""

    def __init__(self, dims: Dims, tensors: dict[str, Tensor]):
        expected = param_shapes(dims)
        if set(expected) != set(tensors):
            missing = set(expected) ^ set(tensors)
            raise ValueError(f"parameter names do not match dims: {sorted(missing)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {tensors[name].shape} != {shape}")
        self.dims = dims
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors["embed"].dtype

    def count(self, prefix: str | None = None) -> int:
        return sum(t.data.size for n, t in self.tensors.items()
                   if prefix is None or n.startswith(prefix))

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {n: Tensor(t.data.copy(), requires_grad=True, name=n)
                                       for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.dims, {n: Tensor(t.data.astype(dtype), requires_grad=True, name=n)
                                       for n, t in self.tensors.items()})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.tensors.items()}

    def decoder_embed(self) -> Tensor:
        if "base_embed" in self.tensors:
            return self.tensors["base_embed"]
        return self.tensors["embed"]


def init_params(dims: Dims, seed: int, dtype=None) -> ModelParams:
    """Glorot-uniform matrices, zero biases, LSTM forget-gate bias 1."""
    dtype = dtype or nx.default_dtype()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 1:
            arr = np.zeros(shape)
            if name in ("enc_b", "wr_b", "base_b"):
                H = shape[0] // 4
                arr[H:2 * H] = 1.0
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-a, a, size=shape)
        tensors[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return ModelParams(dims, tensors)


def dims_dict(dims: Dims) -> dict:
    return asdict(dims)


# ----------------------------------------------------------------- layers


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, U: Tensor, b: Tensor):
    """One LSTM step; gate order in the fused weights is (input, forget,
    output, candidate)."""
    H = h.shape[-1]
    gates = x @ W + h @ U + b
    i = nx.sigmoid(gates[..., :H])
    f = nx.sigmoid(gates[..., H:2 * H])
    o = nx.sigmoid(gates[..., 2 * H:3 * H])
    g = nx.tanh(gates[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * nx.tanh(c_new)
    return h_new, c_new


def rowwise_matmul(a: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``a @ W`` computed so that each output row depends only on its own
    input row, bit for bit, whatever the number of rows.  BLAS blocking does
    not give that guarantee, and search needs a sentence's score not to
    depend on the beam width."""
    return np.einsum("...i,ij->...j", a, W)


def lstm_cell_np(x, h, c, W, U, b):
    """Tape-free twin of ``lstm_cell`` on plain arrays (used by decoders)."""
    H = h.shape[-1]
    gates = rowwise_matmul(x, W) + rowwise_matmul(h, U) + b
    sig = lambda v: 0.5 * (1.0 + np.tanh(0.5 * v))
    i, f, o = sig(gates[..., :H]), sig(gates[..., H:2 * H]), sig(gates[..., 2 * H:3 * H])
    c_new = f * c + i * np.tanh(gates[..., 3 * H:])
    return o * np.tanh(c_new), c_new


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
