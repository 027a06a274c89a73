"""Dense layer kernels with analytic forward and backward passes.

Tensors are plain float64 numpy arrays with a leading batch axis.  Image
tensors are laid out as (batch, channels, height, width).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DENSE = "dense"
RELU = "relu"
CONV2D = "conv2d"
MAXPOOL2D = "maxpool2d"
FLATTEN = "flatten"

LAYER_KINDS = (DENSE, RELU, CONV2D, MAXPOOL2D, FLATTEN)
PARAMETERIZED = (DENSE, CONV2D)


class ShapeError(ValueError):
    """Raised when a tensor does not have the dimensions a layer expects."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int = 0
    n_out: int = 0
    kh: int = 0
    kw: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == DENSE and (self.n_in < 1 or self.n_out < 1):
            raise ValueError("dense layer needs positive in/out widths")
        if self.kind == CONV2D and min(self.n_in, self.n_out, self.kh, self.kw) < 1:
            raise ValueError("conv2d layer needs positive channels and kernel size")

    @property
    def has_params(self) -> bool:
        return self.kind in PARAMETERIZED

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == DENSE:
            return (self.n_out, self.n_in)
        if self.kind == CONV2D:
            return (self.n_out, self.n_in, self.kh, self.kw)
        return ()

    def bias_shape(self) -> tuple[int, ...]:
        return (self.n_out,) if self.has_params else ()

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape."""
        in_shape = tuple(int(d) for d in in_shape)
        if self.kind == DENSE:
            if in_shape != (self.n_in,):
                raise ShapeError(f"dense expects input ({self.n_in},), got {in_shape}")
            return (self.n_out,)
        if self.kind == RELU:
            return in_shape
        if self.kind == FLATTEN:
            return (int(np.prod(in_shape)),)
        if len(in_shape) != 3:
            raise ShapeError(f"{self.kind} expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if self.kind == CONV2D:
            if c != self.n_in:
                raise ShapeError(f"conv2d expects {self.n_in} input channels, got {c}")
            if h < self.kh or w < self.kw:
                raise ShapeError(f"conv2d kernel {self.kh}x{self.kw} larger than input {h}x{w}")
            return (self.n_out, h - self.kh + 1, w - self.kw + 1)
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool2d needs at least 2x2 input, got {h}x{w}")
        return (c, h // 2, w // 2)


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec(DENSE, n_in, n_out)


def conv2d(in_channels: int, out_channels: int, kh: int, kw: Optional[int] = None) -> LayerSpec:
    return LayerSpec(CONV2D, in_channels, out_channels, kh, kh if kw is None else kw)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def maxpool2d() -> LayerSpec:
    return LayerSpec(MAXPOOL2D)


def flatten() -> LayerSpec:
    return LayerSpec(FLATTEN)


@dataclass
class LayerParams:
    weights: Optional[np.ndarray] = None
    biases: Optional[np.ndarray] = None

    def copy(self) -> "LayerParams":
        return LayerParams(
            None if self.weights is None else self.weights.copy(),
            None if self.biases is None else self.biases.copy(),
        )


NO_PARAMS = LayerParams()


def check_network(specs: Sequence[LayerSpec], in_shape: Sequence[int]) -> tuple[int, ...]:
    """Shape-check a layer stack end to end and return its output shape."""
    shape = tuple(in_shape)
    for i, spec in enumerate(specs):
        try:
            shape = spec.output_shape(shape)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
    return shape


def init_params(spec: LayerSpec, rng: np.random.Generator) -> LayerParams:
    """Glorot-uniform weights, zero biases."""
    if not spec.has_params:
        return NO_PARAMS
    if spec.kind == DENSE:
        fan_in, fan_out = spec.n_in, spec.n_out
    else:
        area = spec.kh * spec.kw
        fan_in, fan_out = spec.n_in * area, spec.n_out * area
    s = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-s, s, size=spec.weight_shape())
    return LayerParams(w, np.zeros(spec.bias_shape()))


def _check_params(spec: LayerSpec, params: LayerParams) -> None:
    if not spec.has_params:
        return
    if params.weights is None or params.biases is None:
        raise ShapeError(f"{spec.kind} layer requires weights and biases")
    if params.weights.shape != spec.weight_shape():
        raise ShapeError(
            f"{spec.kind} weights have shape {params.weights.shape}, expected {spec.weight_shape()}"
        )
    if params.biases.shape != spec.bias_shape():
        raise ShapeError(
            f"{spec.kind} biases have shape {params.biases.shape}, expected {spec.bias_shape()}"
        )


def layer_forward(spec: LayerSpec, params: LayerParams, x: np.ndarray):
    """Apply one layer to a batch. Returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        raise ShapeError("input must have a leading batch axis")
    spec.output_shape(x.shape[1:])
    _check_params(spec, params)

    if spec.kind == DENSE:
        out = x @ params.weights.T + params.biases
        return out, (spec, x)
    if spec.kind == RELU:
        return np.maximum(x, 0.0), (spec, x > 0)
    if spec.kind == FLATTEN:
        return x.reshape(x.shape[0], -1), (spec, x.shape)
    if spec.kind == CONV2D:
        windows = sliding_window_view(x, (spec.kh, spec.kw), axis=(2, 3))
        out = np.einsum("nchwij,ocij->nohw", windows, params.weights, optimize=True)
        out += params.biases[None, :, None, None]
        return out, (spec, x)

    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    # argmax returns the first maximal entry: ties go to the row-major lowest index
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (spec, x.shape, idx)


def layer_backward(spec: LayerSpec, params: LayerParams, cache, grad_out: np.ndarray):
    """Backpropagate through one layer. Returns ``(grad_input, grad_params)``."""
    if cache[0] != spec:
        raise ShapeError(f"cache was produced by {cache[0].kind}, not {spec.kind}")
    g = np.asarray(grad_out, dtype=np.float64)

    if spec.kind == DENSE:
        x = cache[1]
        if g.shape != (x.shape[0], spec.n_out):
            raise ShapeError(f"dense grad_output shape {g.shape} != {(x.shape[0], spec.n_out)}")
        return g @ params.weights, LayerParams(g.T @ x, g.sum(axis=0))
    if spec.kind == RELU:
        mask = cache[1]
        if g.shape != mask.shape:
            raise ShapeError(f"relu grad_output shape {g.shape} != {mask.shape}")
        return np.where(mask, g, 0.0), NO_PARAMS
    if spec.kind == FLATTEN:
        shape = cache[1]
        if g.shape != (shape[0], int(np.prod(shape[1:]))):
            raise ShapeError(f"flatten grad_output shape {g.shape} does not match {shape}")
        return g.reshape(shape), NO_PARAMS
    if spec.kind == CONV2D:
        x = cache[1]
        expected = (x.shape[0],) + spec.output_shape(x.shape[1:])
        if g.shape != expected:
            raise ShapeError(f"conv2d grad_output shape {g.shape} != {expected}")
        windows = sliding_window_view(x, (spec.kh, spec.kw), axis=(2, 3))
        gw = np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        padded = np.pad(g, ((0, 0), (0, 0), (spec.kh - 1, spec.kh - 1), (spec.kw - 1, spec.kw - 1)))
        gwin = sliding_window_view(padded, (spec.kh, spec.kw), axis=(2, 3))
        flipped = params.weights[:, :, ::-1, ::-1]
        gx = np.einsum("nohwij,ocij->nchw", gwin, flipped, optimize=True)
        return gx, LayerParams(gw, gb)

    in_shape, idx = cache[1], cache[2]
    if g.shape != idx.shape:
        raise ShapeError(f"maxpool2d grad_output shape {g.shape} != {idx.shape}")
    n, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    routed = np.zeros(idx.shape + (4,))
    np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
    routed = routed.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx = np.zeros(in_shape)
    gx[:, :, : 2 * h2, : 2 * w2] = routed.reshape(n, c, 2 * h2, 2 * w2)
    return gx, NO_PARAMS


def network_forward(specs: Sequence[LayerSpec], params: Sequence[LayerParams], x: np.ndarray):
    """Run a layer stack. Returns the final output and the per-layer caches."""
    if len(specs) != len(params):
        raise ShapeError(f"{len(specs)} layer specs but {len(params)} parameter sets")
    out = np.asarray(x, dtype=np.float64)
    caches = []
    for spec, p in zip(specs, params):
        out, cache = layer_forward(spec, p, out)
        caches.append(cache)
    return out, caches


def network_backward(specs, params, caches, grad_out):
    """Backpropagate through a stack. Returns grad w.r.t. the input and per-layer grads."""
    g = grad_out
    grads = [NO_PARAMS] * len(specs)
    for i in range(len(specs) - 1, -1, -1):
        g, grads[i] = layer_backward(specs[i], params[i], caches[i], g)
    return g, grads
