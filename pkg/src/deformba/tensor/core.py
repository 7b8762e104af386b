"""Tensor container, gradient tape and operation counter.

A :class:`Tensor` is an immutable float64 array. Primitives compute their
output with numpy and, when a :class:`GradTape` is active, register a
vector-Jacobian product so the tape can be replayed backward.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand extents do not satisfy a primitive's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class Tensor:
    """Dense row-major float64 array with shape metadata.

    The buffer is copied on construction and marked read-only, so a tensor
    never changes after it is built.
    """

    __slots__ = ("_data",)
    __array_priority__ = 100

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=True if copy else None, order="C")
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __len__(self) -> int:
        return self.shape[0]

    # Operator sugar; implementations live in ``ops``.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# gradient tape

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class GradTape:
    """Records primitive applications for reverse-mode differentiation.

    Usage::

        with GradTape() as tape:
            y = f(x)
        (gx,) = tape.gradient(y, [x])
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "GradTape":
        _stack('tapes').append(self)
        return self

    def __exit__(self, *exc) -> None:
        _pop(_stack('tapes'), self)

    def __len__(self) -> int:
        return len(self._records)

    def gradient(
        self,
        target: Tensor,
        sources: Sequence[Tensor],
        seed: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Replay the tape backward from ``target``.

        ``seed`` is the cotangent of ``target`` (ones for a scalar when omitted).
        Sources that do not influence the target get zero gradients.
        """
        if seed is None:
            if target.size != 1:
                raise ShapeError("gradient of a non-scalar target needs an explicit seed")
            seed = np.ones(target.shape)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != target.shape:
            raise ShapeError(f"seed shape {seed.shape} != target shape {target.shape}")

        grads: dict[int, np.ndarray] = {id(target): seed}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"vjp produced {gi.shape} for input of shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            # Keep the output's gradient visible if it is itself a source.
            if any(rec.output is s for s in sources):
                grads[id(rec.output)] = g
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros(s.shape) if g is None else g)
        for g in out:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient")
        return out


# Tapes and counters are per thread so suites can run checks concurrently.
_LOCAL = threading.local()


def _stack(name: str) -> list:
    st = getattr(_LOCAL, name, None)
    if st is None:
        st = []
        setattr(_LOCAL, name, st)
    return st


def _pop(stack: list, obj) -> None:
    # by identity: dataclass equality would match another counter with equal tallies
    for i in range(len(stack) - 1, -1, -1):
        if stack[i] is obj:
            del stack[i]
            return


def record(out: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Wrap ``out`` as a Tensor and register its vjp on every active tape."""
    t = Tensor(out, copy=False)
    tapes = _stack("tapes")
    if tapes:
        rec = _Record(tuple(inputs), t, vjp)
        for tape in tapes:
            tape._records.append(rec)
    return t


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# operation counting

@dataclass
class OpCounter:
    """Accumulates FLOPs (multiply-accumulate = 2) by category.

    Activations, normalizations and plain elementwise arithmetic are not
    counted. ``samples`` tallies bilinear sample points, optionally per owner;
    ``min_kink`` is the closest any sampled coordinate came to an integer.
    """

    flops: Counter = field(default_factory=Counter)
    samples: int = 0
    samples_by_owner: Counter = field(default_factory=Counter)
    min_kink: float = float("inf")

    def __enter__(self) -> "OpCounter":
        _stack('counters').append(self)
        return self

    def __exit__(self, *exc) -> None:
        _pop(_stack('counters'), self)

    @property
    def total(self) -> int:
        return sum(self.flops.values())

    @property
    def macs(self) -> int:
        return self.total // 2


def count_macs(category: str, macs: int) -> None:
    for c in _stack("counters"):
        c.flops[category] += 2 * int(macs)


def count_samples(n: int, owners: np.ndarray | None = None, positions: np.ndarray | None = None) -> None:
    counters = _stack("counters")
    if not counters:
        return
    kink = float("inf")
    if positions is not None and positions.size:
        kink = float(np.min(np.abs(positions - np.round(positions))))
    tally = None
    if owners is not None:
        ids, cnt = np.unique(np.asarray(owners), return_counts=True)
        tally = dict(zip(ids.tolist(), cnt.tolist()))
    for c in counters:
        c.samples += int(n)
        c.min_kink = min(c.min_kink, kink)
        if tally:
            c.samples_by_owner.update(tally)
