"""Central-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .core import GradTape, NonFiniteError, Tensor


def probe_weights(shape, seed: int) -> np.ndarray:
    """Fixed random cotangent used to reduce an output to a scalar loss."""
    return np.random.default_rng(seed).standard_normal(shape)


def vjp_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    probe_seed: int = 0,
    h: float = 1e-5,
    max_probes: int | None = None,
    return_grads: bool = False,
    per_input: bool = False,
):
    """Compare tape gradients of ``sum(fn(*inputs) * W)`` with central differences.

    Returns the max over all probed coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. ``max_probes`` limits the
    number of coordinates probed per input (chosen with ``probe_seed``).
    With ``per_input`` the result is a list holding one error per input.
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    with GradTape() as tape:
        out = fn(*inputs)
        w = probe_weights(out.shape, probe_seed)
        loss = ops.sum(ops.mul(out, Tensor(w)))
    analytic = tape.gradient(loss, inputs)
    for g in analytic:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite analytic gradient")

    def loss_at(i: int, flat_idx: int, delta: float) -> float:
        arr = inputs[i].numpy()
        arr.reshape(-1)[flat_idx] += delta
        args = list(inputs)
        args[i] = Tensor(arr)
        y = fn(*args).data
        return float(np.sum(y * w))

    rng = np.random.default_rng(probe_seed + 1)
    errors = []
    for i, x in enumerate(inputs):
        worst = 0.0
        idx = np.arange(x.size)
        if max_probes is not None and x.size > max_probes:
            idx = np.sort(rng.choice(x.size, size=max_probes, replace=False))
        ga = analytic[i].reshape(-1)
        for j in idx:
            numeric = (loss_at(i, j, h) - loss_at(i, j, -h)) / (2.0 * h)
            err = abs(ga[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        errors.append(worst)
    result = errors if per_input else max(errors, default=0.0)
    if return_grads:
        return result, analytic
    return result
