"""Parameter containers and initialization."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import ops
from .core import ShapeError, Tensor


@dataclass(frozen=True)
class LinearLayer:
    """Pointwise linear map over the channel axis (axis 1)."""

    weight: Tensor  # [out, in]
    bias: Tensor | None = None  # [out]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"linear weight must be [out, in], got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects {self.in_features} channels on axis 1, got {x.shape}")
        lead, rest = x.shape[0], x.shape[2:]
        flat = x.reshape(lead, self.in_features, int(np.prod(rest, dtype=np.int64)))
        y = ops.matmul(self.weight, flat)
        if self.bias is not None:
            y = y + self.bias.reshape(self.out_features, 1)
        return y.reshape((lead, self.out_features) + rest)

    @property
    def num_params(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)


def linear(rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True, zero: bool = False) -> LinearLayer:
    """Uniform(+-1/sqrt(fan_in)) weights, zero bias; ``zero`` zeroes the weights too."""
    if zero:
        w = np.zeros((n_out, n_in))
    else:
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
    return LinearLayer(Tensor(w), Tensor(np.zeros(n_out)) if bias else None)


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


@dataclass(frozen=True)
class DepthwiseConv2D:
    kernel: Tensor  # [C, kh, kw]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(x, self.kernel)


@dataclass(frozen=True)
class Conv1DChannel:
    kernel: Tensor  # [k], k odd

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d_channel(x, self.kernel)


@dataclass(frozen=True)
class Conv2D:
    weight: Tensor  # [O, I, kh, kw]
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return y + self.bias.reshape(-1, 1, 1)


def conv2d_layer(rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, stride: int = 1) -> Conv2D:
    return Conv2D(uniform(rng, (c_out, c_in, k, k), c_in * k * k), Tensor(np.zeros(c_out)), stride, k // 2)


# --------------------------------------------------------------------------
# parameter trees


def param_leaves(obj: Any) -> list[Tensor]:
    """All tensors reachable through dataclass fields, lists and tuples, in order."""
    if isinstance(obj, Tensor):
        return [obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out: list[Tensor] = []
        for f in dataclasses.fields(obj):
            out.extend(param_leaves(getattr(obj, f.name)))
        return out
    if isinstance(obj, (list, tuple)):
        return [t for item in obj for t in param_leaves(item)]
    return []


def with_leaves(obj: Any, leaves) -> Any:
    """Rebuild ``obj`` with its tensors replaced, in :func:`param_leaves` order."""
    it = iter(leaves)
    out = _rebuild(obj, it)
    if next(it, None) is not None:
        raise ValueError("too many leaves for parameter tree")
    return out


def _rebuild(obj, it):
    if isinstance(obj, Tensor):
        return next(it)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {f.name: _rebuild(getattr(obj, f.name), it) for f in dataclasses.fields(obj)}
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, list):
        return [_rebuild(x, it) for x in obj]
    if isinstance(obj, tuple):
        return tuple(_rebuild(x, it) for x in obj)
    return obj


def count_params(obj: Any) -> int:
    return sum(t.size for t in param_leaves(obj))
