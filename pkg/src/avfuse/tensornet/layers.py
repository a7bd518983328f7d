"""Layer descriptors, shape propagation, parameter stores, and forwards.

A NetworkSpec is an ordered list of named layer descriptors. Shapes follow
deterministic propagation rules; `propagate` raises ShapeError naming the
offending layer and both shapes. Forward passes build an autodiff tape
whenever inputs or parameters require grad, except conv2d which is
inference-only (its backward raises).

Layout conventions: dense inputs are (batch, features); conv inputs are
unbatched (channels, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .. import tensorfile
from .tensor import Tensor, concat, make_op, matmul, relu, sigmoid

ShapeT = tuple[int, ...]


@dataclass(frozen=True)
class Dense:
    fan_in: int
    fan_out: int
    kind = "dense"


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    kind = "conv2d"


@dataclass(frozen=True)
class MaxPool2d:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    kind = "maxpool2d"


@dataclass(frozen=True)
class BatchNorm:
    num_features: int
    momentum: float = 0.9
    eps: float = 1e-5
    kind = "batchnorm"


@dataclass(frozen=True)
class Dropout:
    rate: float
    kind = "dropout"


@dataclass(frozen=True)
class Relu:
    kind = "relu"


@dataclass(frozen=True)
class Sigmoid:
    kind = "sigmoid"


@dataclass(frozen=True)
class Concat:
    kind = "concat"


@dataclass(frozen=True)
class GlobalAvgPool:
    kind = "global-avg-pool"


@dataclass(frozen=True)
class Identity:
    kind = "identity"


LayerT = Union[
    Dense, Conv2d, MaxPool2d, BatchNorm, Dropout, Relu, Sigmoid, Concat, GlobalAvgPool, Identity
]


@dataclass
class NetworkSpec:
    """Ordered, named layers. Unnamed layers get "<kind><index>" names."""

    layers: list[tuple[str, LayerT]] = field(default_factory=list)

    @classmethod
    def of(cls, *layers: LayerT | tuple[str, LayerT]) -> "NetworkSpec":
        named: list[tuple[str, LayerT]] = []
        for i, item in enumerate(layers):
            if isinstance(item, tuple):
                named.append(item)
            else:
                named.append((f"{item.kind.replace('-', '_')}{i}", item))
        spec = cls(named)
        spec.validate()
        return spec

    def validate(self) -> None:
        seen: set[str] = set()
        for name, layer in self.layers:
            if name in seen:
                raise ValueError(f"duplicate layer name '{name}'")
            seen.add(name)
            if isinstance(layer, Dropout) and not 0.0 <= layer.rate < 1.0:
                raise ValueError(f"{name}: dropout rate must be in [0, 1), got {layer.rate}")
            if isinstance(layer, Concat) and (name, layer) != self.layers[0]:
                raise ValueError(f"{name}: concat is only supported as the first layer")

    def propagate(self, input_shape: ShapeT | Sequence[ShapeT]) -> list[ShapeT]:
        """Output shape after each layer, for the given input shape(s)."""
        shape = input_shape
        trace: list[ShapeT] = []
        for name, layer in self.layers:
            shape = _propagate_layer(name, layer, shape)
            trace.append(shape)
        return trace

    def output_shape(self, input_shape: ShapeT | Sequence[ShapeT]) -> ShapeT:
        return self.propagate(input_shape)[-1]


def _conv_extent(name: str, size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"{name}: window {kernel} (stride {stride}, pad {padding}) "
                         f"does not fit extent {size}")
    return out


def _propagate_layer(name: str, layer: LayerT, shape) -> ShapeT:
    if isinstance(layer, Concat):
        shapes = list(shape)
        if not shapes or any(len(s) != 2 for s in shapes) or len({s[0] for s in shapes}) != 1:
            raise ShapeError(f"{name}: concat expects (batch, features) inputs with equal "
                             f"batch, got {shapes}")
        return (shapes[0][0], sum(s[1] for s in shapes))
    if not isinstance(shape, tuple):
        raise ShapeError(f"{name}: expected a single input shape, got {shape}")
    if isinstance(layer, Dense):
        if len(shape) != 2 or shape[1] != layer.fan_in:
            raise ShapeError(f"{name}: dense expects (batch, {layer.fan_in}), got {shape}")
        return (shape[0], layer.fan_out)
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeError(f"{name}: conv2d expects ({layer.in_channels}, H, W), got {shape}")
        oh = _conv_extent(name, shape[1], layer.kernel[0], layer.stride[0], layer.padding[0])
        ow = _conv_extent(name, shape[2], layer.kernel[1], layer.stride[1], layer.padding[1])
        return (layer.out_channels, oh, ow)
    if isinstance(layer, MaxPool2d):
        if len(shape) != 3:
            raise ShapeError(f"{name}: maxpool2d expects (C, H, W), got {shape}")
        oh = _conv_extent(name, shape[1], layer.kernel[0], layer.stride[0], 0)
        ow = _conv_extent(name, shape[2], layer.kernel[1], layer.stride[1], 0)
        return (shape[0], oh, ow)
    if isinstance(layer, BatchNorm):
        feat = shape[1] if len(shape) == 2 else shape[0] if len(shape) == 3 else None
        if feat != layer.num_features:
            raise ShapeError(f"{name}: batchnorm over {layer.num_features} features "
                             f"does not match {shape}")
        return shape
    if isinstance(layer, GlobalAvgPool):
        if len(shape) != 3:
            raise ShapeError(f"{name}: global-avg-pool expects (C, H, W), got {shape}")
        return (shape[0], 1)
    if isinstance(layer, (Dropout, Relu, Sigmoid, Identity)):
        return shape
    raise TypeError(f"{name}: unknown layer {layer!r}")


# ---------------------------------------------------------------------------
# Parameters


class ParamStore:
    """Parameters and buffers per layer, keyed "<layer>.<tensor>".

    Trainable entries are Tensors with requires_grad; batchnorm running
    stats live in `buffers` as plain arrays (mutated by train-mode
    forwards, read by eval).
    """

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    @classmethod
    def initialize(cls, spec: NetworkSpec, seed: int, dtype=np.float64) -> "ParamStore":
        """He-uniform init for layers feeding ReLU, Glorot-uniform otherwise."""
        rng = np.random.default_rng(seed)
        store = cls()
        for i, (name, layer) in enumerate(spec.layers):
            if isinstance(layer, Dense):
                fan_in, fan_out = layer.fan_in, layer.fan_out
                limit = _init_limit(spec, i, fan_in, fan_out)
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
                store.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
                store.params[f"{name}.bias"] = Tensor(np.zeros(fan_out, dtype=dtype),
                                                      requires_grad=True)
            elif isinstance(layer, Conv2d):
                kh, kw = layer.kernel
                fan_in = layer.in_channels * kh * kw
                fan_out = layer.out_channels * kh * kw
                limit = _init_limit(spec, i, fan_in, fan_out)
                w = rng.uniform(-limit, limit,
                                size=(layer.out_channels, layer.in_channels, kh, kw)).astype(dtype)
                store.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
                store.params[f"{name}.bias"] = Tensor(
                    np.zeros(layer.out_channels, dtype=dtype), requires_grad=True)
            elif isinstance(layer, BatchNorm):
                f = layer.num_features
                store.params[f"{name}.gamma"] = Tensor(np.ones(f, dtype=dtype), requires_grad=True)
                store.params[f"{name}.beta"] = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
                store.buffers[f"{name}.running_mean"] = np.zeros(f, dtype=dtype)
                store.buffers[f"{name}.running_var"] = np.ones(f, dtype=dtype)
        return store

    def trainable(self) -> dict[str, Tensor]:
        return self.params

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for key, p in self.params.items():
            if p.grad is None:
                raise RuntimeError(f"no gradient for '{key}' (backward not run?)")
            out[key] = p.grad
        return out

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for key, p in self.params.items():
            dup.params[key] = Tensor(p.data.copy(), requires_grad=p.requires_grad)
        dup.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return dup

    def astype(self, dtype) -> "ParamStore":
        dup = ParamStore()
        for key, p in self.params.items():
            dup.params[key] = Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
        dup.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return dup

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {key: p.data for key, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for key in self.params:
            if key not in state:
                raise KeyError(f"checkpoint missing parameter '{key}'")
            if state[key].shape != self.params[key].shape:
                raise ShapeError(f"{key}: checkpoint shape {state[key].shape} != "
                                 f"expected {self.params[key].shape}")
            self.params[key] = Tensor(state[key].copy(),
                                      requires_grad=self.params[key].requires_grad)
        for key in self.buffers:
            if key not in state:
                raise KeyError(f"checkpoint missing buffer '{key}'")
            self.buffers[key] = state[key].copy()

    def save(self, path) -> None:
        tensorfile.write_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(tensorfile.read_tensors(path))


def _init_limit(spec: NetworkSpec, index: int, fan_in: int, fan_out: int) -> float:
    if _feeds_relu(spec, index):
        return float(np.sqrt(6.0 / fan_in))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _feeds_relu(spec: NetworkSpec, index: int) -> bool:
    for _, nxt in spec.layers[index + 1:]:
        if isinstance(nxt, (BatchNorm, Dropout, Identity)):
            continue
        return isinstance(nxt, Relu)
    return False


# ---------------------------------------------------------------------------
# Forward passes


def layer_forward(
    layer: LayerT,
    name: str,
    params: ParamStore,
    x: Tensor | Sequence[Tensor],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run one layer. `mode` selects dropout/batchnorm behavior; the tape is
    recorded whenever inputs or parameters require grad."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if isinstance(layer, Concat):
        parts = [t if isinstance(t, Tensor) else Tensor(t) for t in x]
        if any(p.data.ndim != 2 for p in parts):
            raise ShapeError(f"{name}: concat expects (batch, features) inputs, "
                             f"got {[p.shape for p in parts]}")
        return concat(parts, axis=1)
    if not isinstance(x, Tensor):
        x = Tensor(x)
    _propagate_layer(name, layer, x.shape)  # shape check up front

    if isinstance(layer, Dense):
        w = params.params[f"{name}.weight"]
        b = params.params[f"{name}.bias"]
        return matmul(x, w) + b
    if isinstance(layer, Conv2d):
        return _conv2d(layer, name, params, x)
    if isinstance(layer, MaxPool2d):
        return _maxpool2d(layer, x)
    if isinstance(layer, BatchNorm):
        return _batchnorm(layer, name, params, x, mode)
    if isinstance(layer, Dropout):
        if mode == "eval" or layer.rate == 0.0:
            return x
        if rng is None:
            raise ValueError(f"{name}: train-mode dropout needs an explicit rng")
        keep = (rng.random(x.shape) >= layer.rate).astype(x.data.dtype)
        scale = Tensor(keep / (1.0 - layer.rate))  # inverted dropout
        return x * scale
    if isinstance(layer, Relu):
        return relu(x)
    if isinstance(layer, Sigmoid):
        return sigmoid(x)
    if isinstance(layer, GlobalAvgPool):
        return _global_avg_pool(x)
    if isinstance(layer, Identity):
        return x
    raise TypeError(f"{name}: unknown layer {layer!r}")


def network_forward(
    spec: NetworkSpec,
    params: ParamStore,
    x,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Sequential composition of layer_forward over the whole spec."""
    out = x
    for name, layer in spec.layers:
        out = layer_forward(layer, name, params, out, mode=mode, rng=rng)
    return out if isinstance(out, Tensor) else Tensor(out)


def _conv2d(layer: Conv2d, name: str, params: ParamStore, x: Tensor) -> Tensor:
    w = params.params[f"{name}.weight"]
    b = params.params[f"{name}.bias"]
    ph, pw = layer.padding
    sh, sw = layer.stride
    xd = x.data
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xd, layer.kernel, axis=(1, 2))[:, ::sh, ::sw]
    out = np.tensordot(w.data, win, axes=([1, 2, 3], [0, 3, 4]))
    out += b.data[:, None, None]

    def bw(_g):
        raise NotImplementedError(
            f"{name}: conv2d has no backward; conv networks are inference-only")

    return make_op(out, (x, w, b), bw)


def _maxpool2d(layer: MaxPool2d, x: Tensor) -> Tensor:
    kh, kw = layer.kernel
    sh, sw = layer.stride
    c, h, w = x.shape
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(c, oh, ow, kh * kw)
    idx = flat.argmax(axis=3)  # first index wins ties (row-major within window)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def bw(g):
        if not x.requires_grad:
            return
        u, v = np.divmod(idx, kw)
        ci = np.broadcast_to(np.arange(c)[:, None, None], idx.shape)
        rows = np.arange(oh)[None, :, None] * sh + u
        cols = np.arange(ow)[None, None, :] * sw + v
        np.add.at(x.grad, (ci, rows, cols), g)

    return make_op(out, (x,), bw)


def _global_avg_pool(x: Tensor) -> Tensor:
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2)).reshape(c, 1)

    def bw(g):
        if x.requires_grad:
            x.grad += g.reshape(c, 1, 1) / (h * w)

    return make_op(out, (x,), bw)


def _batchnorm(layer: BatchNorm, name: str, params: ParamStore, x: Tensor, mode: str) -> Tensor:
    gamma = params.params[f"{name}.gamma"]
    beta = params.params[f"{name}.beta"]
    conv_input = x.data.ndim == 3
    # Unify on (rows, features): conv inputs normalize per channel over spatial.
    xd = x.data.transpose(1, 2, 0).reshape(-1, x.shape[0]) if conv_input else x.data

    if mode == "train":
        if xd.shape[0] < 2:
            raise ShapeError(f"{name}: train-mode batchnorm needs >= 2 rows, got {xd.shape}")
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)  # biased
        m = layer.momentum
        rm = params.buffers[f"{name}.running_mean"]
        rv = params.buffers[f"{name}.running_var"]
        params.buffers[f"{name}.running_mean"] = m * rm + (1.0 - m) * mu
        params.buffers[f"{name}.running_var"] = m * rv + (1.0 - m) * var
    else:
        mu = params.buffers[f"{name}.running_mean"]
        var = params.buffers[f"{name}.running_var"]

    inv = 1.0 / np.sqrt(var + layer.eps)
    xhat = (xd - mu) * inv
    yd = gamma.data * xhat + beta.data
    if conv_input:
        c, h, w = x.shape
        out = yd.reshape(h, w, c).transpose(2, 0, 1)
    else:
        out = yd

    def bw(g):
        gd = g.transpose(1, 2, 0).reshape(-1, x.shape[0]) if conv_input else g
        if gamma.requires_grad:
            gamma.grad += (gd * xhat).sum(axis=0)
        if beta.requires_grad:
            beta.grad += gd.sum(axis=0)
        if x.requires_grad:
            if mode == "train":
                n = xd.shape[0]
                gx = gamma.data * inv * (
                    gd - gd.mean(axis=0) - xhat * (gd * xhat).sum(axis=0) / n)
            else:
                gx = gd * gamma.data * inv
            if conv_input:
                c, h, w = x.shape
                gx = gx.reshape(h, w, c).transpose(2, 0, 1)
            x.grad += gx

    return make_op(out, (x, gamma, beta), bw)
