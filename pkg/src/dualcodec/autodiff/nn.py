"""Parameter containers and the handful of layers the networks are built from."""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from ..exceptions import DimensionError
from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Initializer:
    """Draws initial weights.

    With ``materialize=False`` every parameter is a zero-stride view, so a
    full-size model can be assembled to count parameters without allocating.
    """

    def __init__(self, rng: np.random.Generator | int | None = 0, dtype=np.float32, materialize: bool = True):
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.dtype = np.dtype(dtype)
        self.materialize = materialize

    def _ghost(self, shape) -> np.ndarray:
        return np.broadcast_to(np.zeros((), dtype=self.dtype), shape)

    def normal(self, shape, std: float) -> Parameter:
        if not self.materialize:
            return Parameter(self._ghost(shape))
        return Parameter(self.rng.normal(0.0, std, size=shape).astype(self.dtype))

    def uniform(self, shape, bound: float) -> Parameter:
        if not self.materialize:
            return Parameter(self._ghost(shape))
        return Parameter(self.rng.uniform(-bound, bound, size=shape).astype(self.dtype))

    def zeros(self, shape) -> Parameter:
        if not self.materialize:
            return Parameter(self._ghost(shape))
        return Parameter(np.zeros(shape, dtype=self.dtype))

    def ones(self, shape) -> Parameter:
        if not self.materialize:
            return Parameter(self._ghost(shape))
        return Parameter(np.ones(shape, dtype=self.dtype))


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk_params(value, f"{prefix}{key}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state dict mismatch: missing={missing[:5]}, unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            yield from _walk_modules(value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk_params(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(item, f"{name}.{i}")


def _walk_modules(value):
    if isinstance(value, Module):
        yield from value.modules()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _walk_modules(item)


class Linear(Module):
    def __init__(self, init: Initializer, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.weight = init.zeros((d_in, d_out)) if zero else init.uniform((d_in, d_out), 1.0 / math.sqrt(d_in))
        self.bias = init.zeros((d_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, init: Initializer, c_in: int, c_out: int, kernel=3, stride=1, padding=None,
                 zero: bool = False):
        kh, kw = ops._pair(kernel)
        self.stride = ops._pair(stride)
        self.padding = ops._pair(padding) if padding is not None else (kh // 2, kw // 2)
        shape = (c_out, c_in, kh, kw)
        self.weight = init.zeros(shape) if zero else init.uniform(shape, 1.0 / math.sqrt(c_in * kh * kw))
        self.bias = init.zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, init: Initializer, c_in: int, c_out: int, kernel=2, stride=2, padding=0):
        kh, kw = ops._pair(kernel)
        self.stride = ops._pair(stride)
        self.padding = ops._pair(padding)
        sh, sw = self.stride
        fan_in = c_in * kh * kw / (sh * sw)
        self.weight = init.uniform((c_in, c_out, kh, kw), 1.0 / math.sqrt(fan_in))
        self.bias = init.zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, init: Initializer, dim: int, affine: bool = True):
        self.weight = init.ones((dim,)) if affine else None
        self.bias = init.zeros((dim,)) if affine else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


class ConvSame(Module):
    """Channels-last stride-1 convolution preserving the spatial size."""

    def __init__(self, init: Initializer, c_in: int, c_out: int, kernel=3, zero: bool = False):
        kh, kw = ops._pair(kernel)
        shape = (kh, kw, c_in, c_out)
        self.weight = init.zeros(shape) if zero else init.uniform(shape, 1.0 / math.sqrt(c_in * kh * kw))
        self.bias = init.zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d_same(x, self.weight, self.bias)


class PatchDown(Module):
    """Channels-last strided convolution with kernel equal to stride."""

    def __init__(self, init: Initializer, c_in: int, c_out: int, stride):
        self.stride = ops._pair(stride)
        fan_in = c_in * self.stride[0] * self.stride[1]
        self.weight = init.uniform((fan_in, c_out), 1.0 / math.sqrt(fan_in))
        self.bias = init.zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.patch_down(x, self.weight, self.bias, self.stride)


class PatchUp(Module):
    """Channels-last transposed convolution with kernel equal to stride."""

    def __init__(self, init: Initializer, c_in: int, c_out: int, stride):
        self.stride = ops._pair(stride)
        self.c_out = c_out
        self.weight = init.uniform((c_in, self.stride[0] * self.stride[1] * c_out), 1.0 / math.sqrt(c_in))
        self.bias = init.zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.patch_up(x, self.weight, self.bias, self.stride)
