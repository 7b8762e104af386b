"""Selective-SSM write pass.

The recurrence ``S_t = alpha_t * S_{t-1} + v_t k_t^T`` (``S_0 = 0``) is
evaluated by one of three interchangeable algorithms and every state is
kept, because the read pass needs random access to all of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import LinearLayer, ShapeError, Tensor, count_macs, linear, record
from .tensor import ops

METHODS = ("sequential", "parallel", "chunked")


@dataclass(frozen=True)
class ScanInputs:
    V: Tensor  # [B, C, L]
    K: Tensor  # [B, N, L]
    alpha: Tensor  # [B, C, N, L], entries in (0, 1]

    def __post_init__(self):
        B, C, L = self.V.shape
        if self.K.ndim != 3 or self.K.shape[0] != B or self.K.shape[2] != L:
            raise ShapeError(f"K must be [B,N,L]=[{B},N,{L}], got {self.K.shape}")
        N = self.K.shape[1]
        if self.alpha.shape != (B, C, N, L):
            raise ShapeError(f"alpha must be {(B, C, N, L)}, got {self.alpha.shape}")


@dataclass(frozen=True)
class StateSequence:
    S: Tensor  # [B, C, N, L]

    @property
    def N(self) -> int:
        return self.S.shape[2]

    @property
    def last(self) -> Tensor:
        return self.S[..., -1]


# --------------------------------------------------------------------------
# numpy kernels over the last axis; leading axes are independent lanes


def _sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(b)
    s = np.zeros(b.shape[:-1])
    for t in range(b.shape[-1]):
        s = a[..., t] * s + b[..., t]
        out[..., t] = s
    return out


def _parallel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Work-efficient up-sweep / down-sweep over pairs (a, b) with
    # (a1, b1) . (a2, b2) = (a1 a2, a2 b1 + b2); padded with the identity (1, 0).
    L = b.shape[-1]
    n = 1 << (L - 1).bit_length()
    A = np.ones(b.shape[:-1] + (n,))
    Bv = np.zeros(b.shape[:-1] + (n,))
    A[..., :L] = a
    Bv[..., :L] = b

    d = 1
    while d < n:
        right = np.arange(2 * d - 1, n, 2 * d)
        left = right - d
        Bv[..., right] = A[..., right] * Bv[..., left] + Bv[..., right]
        A[..., right] = A[..., left] * A[..., right]
        d *= 2

    A[..., n - 1] = 1.0
    Bv[..., n - 1] = 0.0
    d = n // 2
    while d >= 1:
        right = np.arange(2 * d - 1, n, 2 * d)
        left = right - d
        ta, tb = A[..., left], Bv[..., left]
        A[..., left] = A[..., right]
        Bv[..., left] = Bv[..., right]
        Bv[..., right] = ta * Bv[..., right] + tb
        A[..., right] = A[..., right] * ta
        d //= 2

    # exclusive prefix -> inclusive state
    return a * Bv[..., :L] + b


def _chunked(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    L = b.shape[-1]
    out = np.empty_like(b)
    carry = np.zeros(b.shape[:-1])
    for start in range(0, L, chunk):
        sl = slice(start, min(start + chunk, L))
        local = _sequential(a[..., sl], b[..., sl])
        decay = np.cumprod(a[..., sl], axis=-1)
        out[..., sl] = local + decay * carry[..., None]
        carry = out[..., sl.stop - 1]
    return out


def run_kernel(a: np.ndarray, b: np.ndarray, method: str = "sequential", chunk: int | None = None) -> np.ndarray:
    if method == "sequential":
        return _sequential(a, b)
    if method == "parallel":
        return _parallel(a, b)
    if method == "chunked":
        if chunk is None or chunk <= 0:
            raise ValueError(f"chunk size must be a positive int, got {chunk}")
        return _chunked(a, b, min(chunk, b.shape[-1]))
    raise ValueError(f"unknown scan method {method!r}; expected one of {METHODS}")


def linear_recurrence(alpha: Tensor, U: Tensor, method: str = "sequential", chunk: int | None = None) -> Tensor:
    """States of ``S_t = alpha_t S_{t-1} + U_t`` along the last axis."""
    if alpha.shape != U.shape:
        raise ShapeError(f"alpha {alpha.shape} and inputs {U.shape} differ")
    ad = alpha.data
    S = run_kernel(ad, U.data, method, chunk)
    count_macs("scan", U.size)

    def vjp(g):
        # G_t = g_t + alpha_{t+1} G_{t+1}, run as a forward scan on reversed time.
        a_next = np.concatenate([ad[..., 1:], np.zeros(ad.shape[:-1] + (1,))], axis=-1)
        G = np.flip(run_kernel(np.flip(a_next, -1), np.flip(g, -1), method, chunk), -1)
        S_prev = np.concatenate([np.zeros(S.shape[:-1] + (1,)), S[..., :-1]], axis=-1)
        return G * S_prev, G

    return record(S, (alpha, U), vjp)


def _scan(inputs: ScanInputs, method: str, chunk: int | None = None) -> StateSequence:
    U = ops.outer(inputs.V, inputs.K)
    return StateSequence(linear_recurrence(inputs.alpha, U, method, chunk))


def scan_sequential(inputs: ScanInputs) -> StateSequence:
    return _scan(inputs, "sequential")


def scan_parallel(inputs: ScanInputs) -> StateSequence:
    return _scan(inputs, "parallel")


def scan_chunked(inputs: ScanInputs, chunk: int) -> StateSequence:
    if not isinstance(chunk, (int, np.integer)) or chunk <= 0:
        raise ValueError(f"chunk size must be a positive int, got {chunk!r}")
    return _scan(inputs, "chunked", int(chunk))


def write_states(
    alpha: Tensor,
    U: Tensor,
    traversal: str = "single",
    method: str = "sequential",
    chunk: int | None = None,
) -> Tensor:
    """Write pass over ``[.., L]``; ``bidirectional`` averages with a reversed sweep."""
    fwd = linear_recurrence(alpha, U, method, chunk)
    if traversal == "single":
        return fwd
    if traversal != "bidirectional":
        raise ValueError(f"unknown traversal {traversal!r}")
    bwd = ops.flip(linear_recurrence(ops.flip(alpha, -1), ops.flip(U, -1), method, chunk), -1)
    return ops.scale(fwd + bwd, 0.5)


def readout_final(S_T: Tensor, Q: Tensor) -> Tensor:
    """Decode the final state with a query sequence: ``O[b,c,q] = sum_n S_T[b,c,n] Q[b,n,q]``."""
    if S_T.ndim != 3 or Q.ndim != 3 or S_T.shape[0] != Q.shape[0] or S_T.shape[2] != Q.shape[1]:
        raise ShapeError(f"readout expects [B,C,N] and [B,N,Lq], got {S_T.shape}, {Q.shape}")
    return ops.matmul(S_T, Q)


# --------------------------------------------------------------------------
# decay


@dataclass(frozen=True)
class DecayParams:
    A_log: Tensor  # [C, N]; A = -exp(A_log) < 0
    dt_proj: LinearLayer  # R -> C


def init_decay(rng: np.random.Generator, R: int, C: int, N: int = 1) -> DecayParams:
    return DecayParams(Tensor(np.zeros((C, N))), linear(rng, R, C))


def decay_from_dt(dt: Tensor, params: DecayParams) -> Tensor:
    """``alpha = exp(softplus(dt_proj(dt)) * -exp(A_log))`` with shape ``[B,C,N,L]``."""
    if dt.ndim != 3 or dt.shape[1] != params.dt_proj.in_features:
        raise ShapeError(f"dt must be [B,{params.dt_proj.in_features},L], got {dt.shape}")
    B, _, L = dt.shape
    C, N = params.A_log.shape
    delta = ops.softplus(params.dt_proj(dt))
    A = ops.scale(ops.exp(params.A_log), -1.0)
    return ops.exp(delta.reshape(B, C, 1, L) * A.reshape(1, C, N, 1))
