"""Context-adaptive state fusion: the read pass over a 2-D state map.

Offsets and fusion weights are predicted from the state map itself; each
location bilinearly samples the map at ``G`` shifted points and mixes the
samples with simplex weights. Coordinates are pixel units with ``x`` the
column and ``y`` the row; integer coordinates land exactly on pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scan import StateSequence
from .tensor import (
    Conv1DChannel,
    DepthwiseConv2D,
    LinearLayer,
    ShapeError,
    Tensor,
    count_macs,
    count_samples,
    linear,
    record,
    uniform,
)
from .tensor import ops


def rearrange_states(S: StateSequence | Tensor, H: int, W: int) -> Tensor:
    """Fold ``[B,C,N,L]`` states into a ``[B, C*N, H, W]`` map (row-major, channel c*N+n)."""
    S = S.S if isinstance(S, StateSequence) else S
    B, C, N, L = S.shape
    if L != H * W:
        raise ShapeError(f"sequence length {L} != H*W = {H}*{W}")
    return S.reshape(B, C * N, H, W)


def flatten_states(S2d: Tensor, N: int = 1) -> Tensor:
    """Inverse of :func:`rearrange_states`."""
    B, CN, H, W = S2d.shape
    if CN % N:
        raise ShapeError(f"{CN} channels do not split into state size {N}")
    return S2d.reshape(B, CN // N, N, H * W)


def reference_grid(H: int, W: int) -> Tensor:
    """``E[i, j] = (j, i)``: every location references itself."""
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    return Tensor(np.stack([jj, ii], axis=-1))


# --------------------------------------------------------------------------
# offset network


@dataclass(frozen=True)
class OffsetNet:
    dw: DepthwiseConv2D  # 3x3 over C*N channels
    eca_kernel: Conv1DChannel  # k = 3
    head_offsets: LinearLayer  # C*N -> 2G, zero-initialized
    head_weights: LinearLayer  # C*N -> G, zero-initialized

    @property
    def G(self) -> int:
        return self.head_weights.out_features


def init_offset_net(rng: np.random.Generator, channels: int, G: int, eca_k: int = 3) -> OffsetNet:
    return OffsetNet(
        dw=DepthwiseConv2D(uniform(rng, (channels, 3, 3), 9)),
        eca_kernel=Conv1DChannel(uniform(rng, (eca_k,), eca_k)),
        head_offsets=linear(rng, channels, 2 * G, zero=True),
        head_weights=linear(rng, channels, G, zero=True),
    )


def eca(U: Tensor, k: Conv1DChannel) -> Tensor:
    """Channel gate: ``U * sigmoid(conv1d_over_channels(spatial_mean(U)))``."""
    B, C = U.shape[:2]
    pooled = ops.mean(U, axis=(2, 3))
    gate = ops.sigmoid(k(pooled))
    return U * gate.reshape(B, C, 1, 1)


def predict_offsets_weights(S2d: Tensor, net: OffsetNet) -> tuple[Tensor, Tensor]:
    """Offsets ``[B,H,W,G,2]`` from DWConv+ECA features; weights ``[B,H,W,G]`` from the map."""
    B, _, H, W = S2d.shape
    G = net.G
    feats = eca(net.dw(S2d), net.eca_kernel)
    dp = net.head_offsets(feats).reshape(B, G, 2, H, W).transpose(0, 3, 4, 1, 2)
    logits = net.head_weights(S2d)
    w = ops.softmax(logits, axis=1).transpose(0, 2, 3, 1)
    return dp, w


def sampling_positions(E: Tensor, dp: Tensor) -> Tensor:
    H, W = E.shape[:2]
    if dp.shape[1:3] != (H, W) or dp.shape[-1] != 2:
        raise ShapeError(f"offsets {dp.shape} do not match reference grid {E.shape}")
    return E.reshape(1, H, W, 1, 2) + dp


# --------------------------------------------------------------------------
# bilinear sampling

_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))  # (dy, dx)


def bilinear_sample(S2d: Tensor, P: Tensor, owners: np.ndarray | None = None) -> Tensor:
    """Sample ``[B,C,H,W]`` at positions ``[B, ..., 2]`` -> ``[B, ..., C]``.

    Neighbours outside the grid contribute zero. A map with batch 1 is
    shared by every batch row of ``P``. ``owners`` labels each sample for
    the instrumented sample counter.
    """
    Bf, C, H, W = S2d.shape
    B = P.shape[0]
    if P.shape[-1] != 2 or (Bf != B and Bf != 1):
        raise ShapeError(f"cannot sample map {S2d.shape} at positions {P.shape}")
    lead = P.shape[1:-1]
    pos = P.data.reshape(B, -1, 2)
    M = pos.shape[1]
    x, y = pos[..., 0], pos[..., 1]
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
    weights = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
    flat = np.ascontiguousarray(S2d.data.reshape(Bf, C, H * W).transpose(0, 2, 1))
    bidx = np.arange(B)[:, None] if Bf == B else np.zeros((B, 1), dtype=np.int64)

    lin_idx, valid = [], []
    for dy, dx in _CORNERS:
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        lin_idx.append(np.where(ok, yi * W + xi, 0))
        valid.append(ok)
    vals = [flat[bidx, li] * ok[..., None] for li, ok in zip(lin_idx, valid)]
    out = (
        weights[0][..., None] * vals[0]
        + weights[1][..., None] * vals[1]
        + weights[2][..., None] * vals[2]
        + weights[3][..., None] * vals[3]
    )
    count_macs("bilinear", 4 * B * M * C)
    count_samples(B * M, owners, pos)

    def vjp(g):
        gflat = np.zeros_like(flat)
        bfull = np.broadcast_to(bidx, (B, M))
        for w_c, li, ok in zip(weights, lin_idx, valid):
            np.add.at(gflat, (bfull, li), (w_c * ok)[..., None] * g)
        dots = [np.sum(g * v, axis=-1) for v in vals]
        gx = (1 - fy) * (dots[1] - dots[0]) + fy * (dots[3] - dots[2])
        gy = (1 - fx) * (dots[2] - dots[0]) + fx * (dots[3] - dots[1])
        gS = gflat.transpose(0, 2, 1).reshape(Bf, C, H, W)
        gP = np.stack([gx, gy], axis=-1).reshape(P.shape)
        return gS, gP

    return record(out.reshape((B,) + lead + (C,)), (S2d, P), vjp)


def integer_distance(P: Tensor | np.ndarray) -> float:
    """Smallest distance of any coordinate to an integer (bilinear kinks)."""
    arr = P.data if isinstance(P, Tensor) else np.asarray(P)
    return float(np.min(np.abs(arr - np.round(arr))))


# --------------------------------------------------------------------------
# fusion and output


def _pairwise_sum(x: np.ndarray, axis: int) -> np.ndarray:
    # Fixed tree order; equal power-of-two splits recombine exactly.
    x = np.moveaxis(x, axis, 0)
    while x.shape[0] > 1:
        n = x.shape[0]
        s = x[0 : n - 1 : 2] + x[1:n:2]
        if n % 2:
            s = np.concatenate([s, x[-1:]], axis=0)
        x = s
    return x[0]


def fuse(samples: Tensor, w: Tensor) -> Tensor:
    """``S_Q[b,:,i,j] = sum_g w[b,i,j,g] * samples[b,i,j,g,:]`` -> ``[B,C,H,W]``."""
    if samples.ndim != 5 or w.shape != samples.shape[:4]:
        raise ShapeError(f"fuse expects [B,H,W,G,C] and [B,H,W,G], got {samples.shape}, {w.shape}")
    sd, wd = samples.data, w.data
    out = _pairwise_sum(sd * wd[..., None], axis=3).transpose(0, 3, 1, 2)
    count_macs("fuse", sd.size)

    def vjp(g):
        gt = g.transpose(0, 2, 3, 1)[:, :, :, None, :]
        return gt * wd[..., None], np.sum(gt * sd, axis=-1)

    return record(np.ascontiguousarray(out), (samples, w), vjp)


def output_project(S_Q: Tensor, Q: Tensor, V: Tensor, D: Tensor) -> Tensor:
    """``O[b,c,l] = sum_n S_Q[b,c,n,l] Q[b,n,l] + V[b,c,l] D[c]``.

    ``S_Q`` may be given folded as ``[B, C*N, L]``.
    """
    B, N, L = Q.shape
    C = V.shape[1]
    if S_Q.ndim == 3:
        S_Q = S_Q.reshape(B, C, N, L)
    if S_Q.shape != (B, C, N, L) or V.shape != (B, C, L) or D.shape != (C,):
        raise ShapeError(f"output_project shapes inconsistent: S_Q {S_Q.shape}, Q {Q.shape}, V {V.shape}, D {D.shape}")
    sd, qd, vd, dd = S_Q.data, Q.data, V.data, D.data
    out = sd[:, :, 0, :] * qd[:, None, 0, :]
    for n in range(1, N):
        out = out + sd[:, :, n, :] * qd[:, None, n, :]
    out = out + vd * dd[None, :, None]
    count_macs("output", B * C * L * (N + 1))

    def vjp(g):
        gS = g[:, :, None, :] * qd[:, None, :, :]
        gQ = np.sum(g[:, :, None, :] * sd, axis=1)
        return gS, gQ, g * dd[None, :, None], np.sum(g * vd, axis=(0, 2))

    return record(out, (S_Q, Q, V, D), vjp)


def casf_read(S2d: Tensor, net: OffsetNet) -> Tensor:
    """Full read pass: predict, sample, fuse. Returns ``S_Q`` as ``[B, C*N, H, W]``."""
    B, CN, H, W = S2d.shape
    dp, w = predict_offsets_weights(S2d, net)
    P = sampling_positions(reference_grid(H, W), dp)
    samples = bilinear_sample(S2d, P.reshape(B, H * W * net.G, 2))
    return fuse(samples.reshape(B, H, W, net.G, CN), w)
