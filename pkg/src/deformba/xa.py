"""Deformba cross-attention for BEV queries.

The multi-view image features are written into per-view state maps once;
BEV queries are lifted to pillars, projected into every camera, and each
query reads the state maps around its visible reference points with learned
offsets and weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import casf
from .scan import DecayParams, decay_from_dt, init_decay, write_states
from .tensor import (
    LinearLayer,
    ShapeError,
    Tensor,
    count_macs,
    linear,
    record,
    uniform,
)
from .tensor import ops

DEPTH_EPS = 1e-5


@dataclass(frozen=True)
class CameraRig:
    lidar2img: np.ndarray  # [num_cams, 4, 4], ego -> homogeneous pixel coords
    h_img: int
    w_img: int

    def __post_init__(self):
        m = np.asarray(self.lidar2img, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (4, 4):
            raise ShapeError(f"lidar2img must be [num_cams, 4, 4], got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("camera matrices must be finite")
        if self.h_img <= 0 or self.w_img <= 0:
            raise ValueError("image extents must be positive")
        object.__setattr__(self, "lidar2img", m)

    @property
    def num_cams(self) -> int:
        return self.lidar2img.shape[0]


@dataclass(frozen=True)
class BEVGrid:
    Hb: int
    Wb: int
    x_range: tuple[float, float] = (-10.0, 10.0)
    y_range: tuple[float, float] = (-10.0, 10.0)
    z_heights: tuple[float, ...] = (-1.0, 0.0, 1.0, 2.0)

    def __post_init__(self):
        if self.Hb <= 0 or self.Wb <= 0:
            raise ValueError("BEV extents must be positive")
        if any(b <= a for a, b in zip(self.z_heights, self.z_heights[1:])):
            raise ValueError(f"pillar heights must be strictly increasing: {self.z_heights}")

    @property
    def P(self) -> int:
        return self.Hb * self.Wb

    @property
    def Z(self) -> int:
        return len(self.z_heights)

    def cell_centers(self) -> np.ndarray:
        """``[P, 2]`` metric (x, y) of each cell, row-major with x along columns."""
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        xs = x0 + (np.arange(self.Wb) + 0.5) * (x1 - x0) / self.Wb
        ys = y0 + (np.arange(self.Hb) + 0.5) * (y1 - y0) / self.Hb
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)


@dataclass(frozen=True)
class ReferenceHits:
    uv: np.ndarray  # [P, num_cams, Z, 2] pixel coordinates
    hit: np.ndarray  # [P, num_cams, Z] bool
    depth: np.ndarray  # [P, num_cams, Z]
    h_img: int
    w_img: int

    @property
    def hits_per_query(self) -> np.ndarray:
        return self.hit.reshape(self.hit.shape[0], -1).sum(axis=1)


def lift_and_project(grid: BEVGrid, rig: CameraRig) -> ReferenceHits:
    xy = grid.cell_centers()
    z = np.asarray(grid.z_heights, dtype=np.float64)
    P, Z = xy.shape[0], z.size
    pts = np.empty((P, Z, 4))
    pts[..., 0] = xy[:, None, 0]
    pts[..., 1] = xy[:, None, 1]
    pts[..., 2] = z[None, :]
    pts[..., 3] = 1.0
    proj = np.einsum("cij,pzj->pczi", rig.lidar2img, pts)
    w = proj[..., 3]
    w = np.where(w == 0.0, 1.0, w)
    proj = proj / w[..., None]
    depth = proj[..., 2]
    safe = np.abs(depth) > 0
    denom = np.where(safe, depth, 1.0)
    u = np.where(safe, proj[..., 0] / denom, 0.0)
    v = np.where(safe, proj[..., 1] / denom, 0.0)
    hit = (depth > DEPTH_EPS) & (u >= 0) & (u < rig.w_img) & (v >= 0) & (v < rig.h_img)
    return ReferenceHits(np.stack([u, v], axis=-1), hit, depth, rig.h_img, rig.w_img)


def pinhole_rig(
    yaws: list[float],
    h_img: int,
    w_img: int,
    focal: float | None = None,
    height: float = 1.5,
    offsets: list[tuple[float, float]] | None = None,
) -> CameraRig:
    """Cameras at ``height`` metres looking horizontally along each yaw (radians)."""
    f = focal if focal is not None else float(w_img)
    K = np.array([[f, 0.0, w_img / 2.0, 0.0], [0.0, f, h_img / 2.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    mats = []
    for i, yaw in enumerate(yaws):
        tx, ty = offsets[i] if offsets else (0.0, 0.0)
        fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        Rm = np.stack([right, down, fwd])  # ego -> camera axes (x right, y down, z forward)
        center = np.array([tx, ty, height])
        E = np.eye(4)
        E[:3, :3] = Rm
        E[:3, 3] = -Rm @ center
        mats.append(K @ E)
    return CameraRig(np.stack(mats), h_img, w_img)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class XAConfig:
    C: int
    C_in: int | None = None
    N: int = 1
    R: int | None = None
    F: int = 2
    num_cams: int = 1
    Z: int = 4
    conv_type: str = "non_causal"
    traversal: str = "single"
    scan_method: str = "sequential"

    def __post_init__(self):
        if self.C_in is None:
            object.__setattr__(self, "C_in", self.C)
        if self.R is None:
            object.__setattr__(self, "R", max(1, math.ceil(self.C / 16)))
        if self.N != 1:
            raise ValueError("the cross-attention block supports state size N = 1 only")
        if self.conv_type not in ("non_causal", "causal", "none"):
            raise ValueError(f"unknown conv_type {self.conv_type!r}")
        if min(self.C, self.C_in, self.R, self.F, self.num_cams, self.Z) <= 0:
            raise ValueError(f"all extents must be positive: {self}")

    @property
    def E(self) -> int:
        return self.num_cams * self.Z


@dataclass(frozen=True)
class XAParams:
    lin_in: LinearLayer  # C_in -> C
    conv1d: Tensor  # [C, 3]
    lin_V: LinearLayer  # C -> R + N   (dt, K)
    decay: DecayParams
    lin_M: LinearLayer  # C -> N + C   (Q~, Z gate)
    lin_Q: LinearLayer  # N -> C
    lin_off: LinearLayer  # N -> E*F*2 + F, zero-initialized
    D: Tensor
    ln_write_gamma: Tensor
    ln_write_beta: Tensor
    ln_out_gamma: Tensor
    ln_out_beta: Tensor
    lin_out: LinearLayer


def init_xa(cfg: XAConfig, seed: int = 0) -> XAParams:
    rng = np.random.default_rng(seed)
    C, N, R = cfg.C, cfg.N, cfg.R
    return XAParams(
        lin_in=linear(rng, cfg.C_in, C),
        conv1d=uniform(rng, (C, 3), 3),
        lin_V=linear(rng, C, R + N),
        decay=init_decay(rng, R, C, N),
        lin_M=linear(rng, C, N + C),
        lin_Q=linear(rng, N, C),
        lin_off=linear(rng, N, cfg.E * cfg.F * 2 + cfg.F, zero=True),
        D=Tensor(np.ones(C)),
        ln_write_gamma=Tensor(np.ones(C * N)),
        ln_write_beta=Tensor(np.zeros(C * N)),
        ln_out_gamma=Tensor(np.ones(C)),
        ln_out_beta=Tensor(np.zeros(C)),
        lin_out=linear(rng, C, C),
    )


# --------------------------------------------------------------------------
# write


@dataclass(frozen=True)
class XAStateMemory:
    S_F: Tensor  # [num_cams, C*N, h, w], after residual + norm
    states: Tensor  # [num_cams, C, N, L], raw scan states


def xa_write(F: Tensor, p: XAParams, cfg: XAConfig) -> XAStateMemory:
    """Scan every view once and build its normalized state map."""
    if F.ndim != 4 or F.shape[1] != cfg.C_in:
        raise ShapeError(f"features must be [num_cams, {cfg.C_in}, h, w], got {F.shape}")
    cams, _, h, w = F.shape
    C, N, R, L = cfg.C, cfg.N, cfg.R, h * w

    v_tilde = p.lin_in(F).reshape(cams, C, L)
    if cfg.conv_type == "none":
        V = ops.silu(v_tilde)
    else:
        V = ops.silu(ops.depthwise_conv1d(v_tilde, p.conv1d, causal=cfg.conv_type == "causal"))
    proj = p.lin_V(V)
    dt, K = proj[:, :R], proj[:, R:]
    alpha = decay_from_dt(dt, p.decay)
    states = write_states(alpha, ops.outer(V, K), cfg.traversal, cfg.scan_method)
    S = states.reshape(cams, C * N, L) + V
    S = ops.layer_norm(S.transpose(0, 2, 1), p.ln_write_gamma, p.ln_write_beta).transpose(0, 2, 1)
    return XAStateMemory(S.reshape(cams, C * N, h, w), states)


# --------------------------------------------------------------------------
# read


def _hit_aggregate(samples: Tensor, w: Tensor, owner: np.ndarray, P: int) -> Tensor:
    """``S_B[b,:,p] = mean over hit slots of p of sum_k w[b,p,k] * samples[b,slot,k,:]``."""
    B, n, F, C = samples.shape
    counts = np.bincount(owner, minlength=P).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros(P), where=counts > 0)
    sd, wd = samples.data, w.data
    ws = wd[:, owner, :]  # [B, n, F]
    weighted = sd[:, :, 0, :] * ws[:, :, 0, None]
    for k in range(1, F):
        weighted = weighted + sd[:, :, k, :] * ws[:, :, k, None]
    acc = np.zeros((B, P, C))
    np.add.at(acc, (slice(None), owner), weighted)
    out = (acc * inv[None, :, None]).transpose(0, 2, 1)
    count_macs("fuse", B * n * F * C)

    def vjp(g):
        gp = g.transpose(0, 2, 1) * inv[None, :, None]  # [B, P, C]
        gslot = gp[:, owner, :]  # [B, n, C]
        gs = gslot[:, :, None, :] * ws[..., None]
        gws = np.sum(gslot[:, :, None, :] * sd, axis=-1)  # [B, n, F]
        gw = np.zeros_like(wd)
        np.add.at(gw, (slice(None), owner), gws)
        return gs, gw

    return record(np.ascontiguousarray(out), (samples, w), vjp)


def feature_coords(uv: np.ndarray, h_img: int, w_img: int, h: int, w: int) -> np.ndarray:
    """Map image pixel coordinates to feature-map pixel coordinates (pixel centres aligned)."""
    sx, sy = w / w_img, h / h_img
    return np.stack([(uv[..., 0] + 0.5) * sx - 0.5, (uv[..., 1] + 0.5) * sy - 0.5], axis=-1)


def read_positions(offsets: Tensor, hits: ReferenceHits, cam: int, h: int, w: int, Z: int):
    """Sampling positions ``[B, n_hit, F, 2]`` in camera ``cam`` plus the owning query per hit."""
    p_idx, z_idx = np.nonzero(hits.hit[:, cam, :])
    ref = feature_coords(hits.uv[p_idx, cam, z_idx], hits.h_img, hits.w_img, h, w)
    e_idx = cam * Z + z_idx
    pos = offsets[:, p_idx, e_idx] + Tensor(ref[None, :, None, :])
    return pos, p_idx


def xa_read(mem: XAStateMemory, M: Tensor, hits: ReferenceHits, p: XAParams, cfg: XAConfig) -> Tensor:
    """Update BEV queries ``[B, C, P]`` from the written state memory."""
    B, C, P = M.shape
    cams, CN, h, w = mem.S_F.shape
    N, F, E, Z = cfg.N, cfg.F, cfg.E, cfg.Z
    if C != cfg.C or hits.hit.shape != (P, cams, Z) or cams != cfg.num_cams:
        raise ShapeError(f"queries {M.shape}, hits {hits.hit.shape} and memory {mem.S_F.shape} disagree with {cfg}")

    mproj = p.lin_M(M)
    Qt, Zg = mproj[:, :N], mproj[:, N:]
    Q = p.lin_Q(ops.silu(Qt))
    off = p.lin_off(Qt)
    offsets = off[:, : E * F * 2].reshape(B, E, F, 2, P).transpose(0, 4, 1, 2, 3)  # [B,P,E,F,2]
    wts = ops.softmax(off[:, E * F * 2 :], axis=1).transpose(0, 2, 1)  # [B,P,F]

    sample_parts, owner_parts = [], []
    for cam in range(cams):
        if not hits.hit[:, cam, :].any():
            continue
        pos, owner = read_positions(offsets, hits, cam, h, w, Z)
        n = owner.size
        labels = np.tile(np.repeat(owner, F), B)
        s = casf.bilinear_sample(mem.S_F[cam : cam + 1], pos.reshape(B, n * F, 2), owners=labels)
        sample_parts.append(s.reshape(B, n, F, CN))
        owner_parts.append(owner)

    if sample_parts:
        samples = sample_parts[0] if len(sample_parts) == 1 else ops.concat(sample_parts, axis=1)
        S_B = _hit_aggregate(samples, wts, np.concatenate(owner_parts), P)
    else:
        S_B = Tensor(np.zeros((B, CN, P)))

    O = S_B * Q + Qt * p.D.reshape(1, C, 1)
    y = ops.layer_norm((O * Zg).transpose(0, 2, 1), p.ln_out_gamma, p.ln_out_beta).transpose(0, 2, 1)
    return p.lin_out(y)


def xa_block(
    F: Tensor,
    M: Tensor,
    grid: BEVGrid,
    rig: CameraRig,
    p: XAParams,
    cfg: XAConfig,
) -> Tensor:
    """Write once, then read for every query."""
    mem = xa_write(F, p, cfg)
    return xa_read(mem, M, lift_and_project(grid, rig), p, cfg)
