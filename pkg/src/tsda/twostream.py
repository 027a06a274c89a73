"""Two-stream networks with per-layer shared, coupled or independent weights.

Parameterized layers (dense, conv2d) are addressed by their ordinal ``j``
among parameterized layers. Shared layers alias one ``LayerParams`` object
in both streams; coupled layers own an affine ``CouplingParams`` pair.
The last layer is the classification/regression head and is always shared.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .losses import TASK_LOSSES, coupling_loss


class SharingMode(str, Enum):
    SHARED = "shared"
    COUPLED = "coupled"
    INDEPENDENT = "independent"


PATTERN_CHARS = {"-": SharingMode.SHARED, "+": SharingMode.COUPLED, "x": SharingMode.INDEPENDENT}
_CHAR_FOR = {v: k for k, v in PATTERN_CHARS.items()}


def parse_pattern(pattern: str) -> list[SharingMode]:
    """``"++---"`` -> modes; '+' coupled, '-' shared, 'x' independent. Unicode minus accepted."""
    modes = []
    for ch in pattern.replace("−", "-"):
        if ch not in PATTERN_CHARS:
            raise ValueError(f"bad pattern character {ch!r} in {pattern!r}; use '+', '-' or 'x'")
        modes.append(PATTERN_CHARS[ch])
    return modes


def format_pattern(modes: Sequence[SharingMode]) -> str:
    return "".join(_CHAR_FOR[SharingMode(m)] for m in modes)


@dataclass
class CouplingParams:
    """Scalars of the affine map ``theta_t ~ a * theta_s + b``, stored as 1-element arrays."""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def identity(cls) -> "CouplingParams":
        return cls(np.ones(1), np.zeros(1))


@dataclass
class StreamPair:
    specs: list[T.LayerSpec]
    modes: list[SharingMode]
    source: list[T.LayerParams]
    target: list[T.LayerParams]
    couplings: dict[int, CouplingParams]
    input_shape: Optional[tuple[int, ...]] = None

    @property
    def param_layers(self) -> list[int]:
        """Spec indices of the parameterized layers, in order."""
        return [i for i, s in enumerate(self.specs) if s.has_params]

    @property
    def omega(self) -> list[int]:
        """Ordinals of coupled layers."""
        return [j for j, m in enumerate(self.modes) if m == SharingMode.COUPLED]

    @property
    def pattern(self) -> str:
        return format_pattern(self.modes)

    def is_shared(self, j: int) -> bool:
        return self.modes[j] == SharingMode.SHARED

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array exactly once; shared storage appears under one name."""
        out = {}
        for j, i in enumerate(self.param_layers):
            src, tgt = self.source[i], self.target[i]
            if self.is_shared(j):
                out[f"L{j}.W"], out[f"L{j}.b"] = src.weights, src.biases
            else:
                out[f"L{j}.s.W"], out[f"L{j}.s.b"] = src.weights, src.biases
                out[f"L{j}.t.W"], out[f"L{j}.t.b"] = tgt.weights, tgt.biases
        for j in sorted(self.couplings):
            out[f"L{j}.a"] = self.couplings[j].a
            out[f"L{j}.b_shift"] = self.couplings[j].b
        return out

    def source_parameters(self) -> dict[str, np.ndarray]:
        """Names and arrays that the source stream reads."""
        out = {}
        for j, i in enumerate(self.param_layers):
            tag = f"L{j}" if self.is_shared(j) else f"L{j}.s"
            out[f"{tag}.W"], out[f"{tag}.b"] = self.source[i].weights, self.source[i].biases
        return out

    def stream(self, which: str) -> list[T.LayerParams]:
        if which == "source":
            return self.source
        if which == "target":
            return self.target
        raise ValueError(f"unknown stream {which!r}")


def build_pair(
    specs: Sequence[T.LayerSpec],
    modes: Sequence,
    seed: int = 0,
    input_shape: Optional[Sequence[int]] = None,
) -> StreamPair:
    """Instantiate a two-stream network with seeded Glorot initialization.

    Source parameters are drawn from ``seed`` independently of ``modes``, so
    every sharing pattern starts from the same source network.
    """
    specs = list(specs)
    if not specs or specs[-1].kind != T.DENSE:
        raise ValueError("the last layer must be the dense head")
    modes = [SharingMode(m) for m in modes]
    n_param = sum(s.has_params for s in specs)
    if len(modes) != n_param:
        raise ValueError(f"{len(modes)} sharing modes for {n_param} parameterized layers")
    if modes[-1] != SharingMode.SHARED:
        raise ValueError("the head layer must be shared")
    if input_shape is not None:
        input_shape = tuple(int(d) for d in input_shape)
        T.check_network(specs, input_shape)

    rng = np.random.default_rng(seed)
    source = [T.init_params(s, rng) for s in specs]
    target = []
    j = 0
    for s, p in zip(specs, source):
        if not s.has_params:
            target.append(p)
            continue
        target.append(p if modes[j] == SharingMode.SHARED else p.copy())
        j += 1
    couplings = {j: CouplingParams.identity() for j, m in enumerate(modes) if m == SharingMode.COUPLED}
    return StreamPair(specs, modes, source, target, couplings, input_shape)


def init_target_from_source(pair: StreamPair) -> StreamPair:
    """Copy source weights into every unshared target layer and reset couplings to (1, 0)."""
    for j, i in enumerate(pair.param_layers):
        if pair.is_shared(j):
            continue
        src, tgt = pair.source[i], pair.target[i]
        tgt.weights[...] = src.weights
        tgt.biases[...] = src.biases
    for c in pair.couplings.values():
        c.a[...] = 1.0
        c.b[...] = 0.0
    return pair


def flat_params(p: T.LayerParams) -> np.ndarray:
    return np.concatenate([p.weights.ravel(), p.biases.ravel()])


def coupling_terms(pair: StreamPair, form: str) -> dict[int, float]:
    """Per-layer weight-regularizer values for every coupled layer."""
    out = {}
    for j in pair.omega:
        i = pair.param_layers[j]
        c = pair.couplings[j]
        out[j] = coupling_loss(form, c.a[0], c.b[0], flat_params(pair.source[i]), flat_params(pair.target[i]))[0]
    return out


def _body_forward(pair: StreamPair, which: str, x: np.ndarray):
    params = pair.stream(which)
    return T.network_forward(pair.specs[:-1], params[:-1], x)


def forward_source(pair: StreamPair, x: np.ndarray) -> np.ndarray:
    """Source-stream representation entering the shared head."""
    return _body_forward(pair, "source", x)[0]


def forward_target(pair: StreamPair, x: np.ndarray) -> np.ndarray:
    """Target-stream representation entering the shared head."""
    return _body_forward(pair, "target", x)[0]


def predict(pair: StreamPair, which: str, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Head outputs (scores or regression values) of one stream."""
    params = pair.stream(which)
    x = np.asarray(x, dtype=np.float64)
    chunks = []
    for start in range(0, len(x), batch_size):
        chunks.append(T.network_forward(pair.specs, params, x[start : start + batch_size])[0])
    if not chunks:
        return np.zeros((0, pair.specs[-1].n_out))
    return np.concatenate(chunks)


def features(pair: StreamPair, which: str, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    chunks = [_body_forward(pair, which, x[s : s + batch_size])[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, pair.specs[-1].n_in))


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   magic "TSDA-CKPT\0" | version u32 | task-loss code u8
#   input rank u32, dims u32 * rank (rank 0 = unknown)
#   n_specs u32, per spec: kind u8, n_in u32, n_out u32, kh u32, kw u32
#   per parameterized layer: mode u8
#   per parameterized layer: source W, b as f64; then target W, b unless shared
#   per coupled layer (ascending): a f64, b f64

CKPT_MAGIC = b"TSDA-CKPT\0"
CKPT_VERSION = 1
_KIND_CODES = {k: n for n, k in enumerate(T.LAYER_KINDS)}
_MODE_CODES = {m: n for n, m in enumerate(SharingMode)}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, pair: StreamPair, task_loss: str) -> None:
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<IB", CKPT_VERSION, TASK_LOSSES.index(task_loss))
    shape = pair.input_shape or ()
    out += struct.pack(f"<I{len(shape)}I", len(shape), *shape)
    out += struct.pack("<I", len(pair.specs))
    for s in pair.specs:
        out += struct.pack("<B4I", _KIND_CODES[s.kind], s.n_in, s.n_out, s.kh, s.kw)
    out += bytes(_MODE_CODES[m] for m in pair.modes)
    for j, i in enumerate(pair.param_layers):
        blocks = [pair.source[i]] if pair.is_shared(j) else [pair.source[i], pair.target[i]]
        for p in blocks:
            out += p.weights.astype("<f8").tobytes()
            out += p.biases.astype("<f8").tobytes()
    for j in sorted(pair.couplings):
        c = pair.couplings[j]
        out += struct.pack("<2d", float(c.a[0]), float(c.b[0]))
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> tuple[StreamPair, str]:
    """Read a checkpoint; returns the pair and its task-loss kind."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a two-stream checkpoint (bad magic)")
    version, task_code = r.unpack("<IB")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if task_code >= len(TASK_LOSSES):
        raise CheckpointError(f"{path}: unknown task-loss code {task_code}")
    (rank,) = r.unpack("<I")
    input_shape = tuple(r.unpack(f"<{rank}I")) if rank else None
    (n_specs,) = r.unpack("<I")
    kinds = T.LAYER_KINDS
    specs = []
    for _ in range(n_specs):
        code, n_in, n_out, kh, kw = r.unpack("<B4I")
        if code >= len(kinds):
            raise CheckpointError(f"{path}: unknown layer kind code {code}")
        specs.append(T.LayerSpec(kinds[code], n_in, n_out, kh, kw))
    n_param = sum(s.has_params for s in specs)
    mode_list = list(SharingMode)
    modes = []
    for code in r.take(n_param):
        if code >= len(mode_list):
            raise CheckpointError(f"{path}: unknown sharing-mode code {code}")
        modes.append(mode_list[code])
    source, target = [], []
    j = 0
    for s in specs:
        if not s.has_params:
            source.append(T.NO_PARAMS)
            target.append(T.NO_PARAMS)
            continue
        src = T.LayerParams(r.array(s.weight_shape()), r.array(s.bias_shape()))
        if modes[j] == SharingMode.SHARED:
            tgt = src
        else:
            tgt = T.LayerParams(r.array(s.weight_shape()), r.array(s.bias_shape()))
        source.append(src)
        target.append(tgt)
        j += 1
    couplings = {}
    for j, m in enumerate(modes):
        if m == SharingMode.COUPLED:
            a, b = r.unpack("<2d")
            couplings[j] = CouplingParams(np.array([a]), np.array([b]))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    pair = StreamPair(specs, modes, source, target, couplings, input_shape)
    return pair, TASK_LOSSES[task_code]
