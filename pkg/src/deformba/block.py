"""Deformba block, ConvFFN and a four-stage hierarchical backbone."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import casf
from .scan import DecayParams, decay_from_dt, init_decay, write_states
from .tensor import (
    Conv2D,
    DepthwiseConv2D,
    LinearLayer,
    ShapeError,
    Tensor,
    conv2d_layer,
    linear,
    uniform,
)
from .tensor import ops

CONV_TYPES = ("non_causal", "causal", "none")
TRAVERSALS = ("single", "bidirectional")


@dataclass(frozen=True)
class BlockConfig:
    C: int
    N: int = 1
    R: int | None = None  # dt rank; defaults to ceil(C / 16)
    G: int = 8
    conv_type: str = "non_causal"
    traversal: str = "single"
    use_state: bool = True
    use_casf: bool = True
    scan_method: str = "sequential"
    chunk: int | None = None

    def __post_init__(self):
        if self.R is None:
            object.__setattr__(self, "R", max(1, math.ceil(self.C / 16)))
        if self.C <= 0 or self.N <= 0 or self.G <= 0:
            raise ValueError(f"C, N, G must be positive: {self}")
        if self.C % self.G:
            raise ValueError(f"G={self.G} must divide C={self.C}")
        if self.R < 1:
            raise ValueError(f"dt rank must be >= 1, got {self.R}")
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"conv_type must be one of {CONV_TYPES}, got {self.conv_type!r}")
        if self.traversal not in TRAVERSALS:
            raise ValueError(f"traversal must be one of {TRAVERSALS}, got {self.traversal!r}")


@dataclass(frozen=True)
class BlockParams:
    lin_in: LinearLayer
    dwconv: DepthwiseConv2D
    causal_kernel: Tensor  # [C, 3], used when conv_type == "causal"
    lin_V: LinearLayer  # C -> R + 2N  (dt, K, Q)
    decay: DecayParams
    offset_net: casf.OffsetNet
    D: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    lin_out: LinearLayer


def init_block(cfg: BlockConfig, rng: np.random.Generator) -> BlockParams:
    C, N, R = cfg.C, cfg.N, cfg.R
    return BlockParams(
        lin_in=linear(rng, C, C),
        dwconv=DepthwiseConv2D(uniform(rng, (C, 3, 3), 9)),
        causal_kernel=uniform(rng, (C, 3), 3),
        lin_V=linear(rng, C, R + 2 * N),
        decay=init_decay(rng, R, C, N),
        offset_net=casf.init_offset_net(rng, C * N, cfg.G),
        D=Tensor(np.ones(C)),
        ln_gamma=Tensor(np.ones(C)),
        ln_beta=Tensor(np.zeros(C)),
        lin_out=linear(rng, C, C),
    )


def _local_mix(v_tilde: Tensor, p: BlockParams, cfg: BlockConfig, H: int, W: int) -> Tensor:
    B, C, L = v_tilde.shape
    if cfg.conv_type == "non_causal":
        conv = p.dwconv(v_tilde.reshape(B, C, H, W)).reshape(B, C, L)
        return ops.silu(conv + v_tilde)
    if cfg.conv_type == "causal":
        return ops.silu(ops.depthwise_conv1d(v_tilde, p.causal_kernel, causal=True) + v_tilde)
    return ops.silu(v_tilde)


def deformba_block_forward(T: Tensor, p: BlockParams, cfg: BlockConfig) -> Tensor:
    """One Deformba mixing block ``[B,C,H,W] -> [B,C,H,W]`` (no residual)."""
    if T.ndim != 4 or T.shape[1] != cfg.C:
        raise ShapeError(f"block expects [B,{cfg.C},H,W], got {T.shape}")
    B, C, H, W = T.shape
    N, R, L = cfg.N, cfg.R, H * W

    v_tilde = p.lin_in(T.reshape(B, C, L))
    V = _local_mix(v_tilde, p, cfg, H, W)
    proj = p.lin_V(V)
    dt, K, Q = proj[:, :R], proj[:, R : R + N], proj[:, R + N :]

    if cfg.use_state:
        alpha = decay_from_dt(dt, p.decay)
        U = ops.outer(V, K)
        S = write_states(alpha, U, cfg.traversal, cfg.scan_method, cfg.chunk)
        S2d = casf.rearrange_states(S, H, W)
    else:
        S2d = ops.broadcast_to(V.reshape(B, C, 1, L), (B, C, N, L)).reshape(B, C * N, H, W)

    S_Q = casf.casf_read(S2d, p.offset_net) if cfg.use_casf else S2d
    O = casf.output_project(S_Q.reshape(B, C * N, L), Q, V, p.D)
    y = ops.layer_norm(O.transpose(0, 2, 1), p.ln_gamma, p.ln_beta).transpose(0, 2, 1)
    return p.lin_out(y).reshape(B, C, H, W)


# --------------------------------------------------------------------------
# ConvFFN


@dataclass(frozen=True)
class ConvFFNParams:
    expand: LinearLayer  # C -> 4C
    dw: DepthwiseConv2D  # [4C, 3, 3]
    project: LinearLayer  # 4C -> C


def init_conv_ffn(C: int, rng: np.random.Generator, ratio: int = 4) -> ConvFFNParams:
    return ConvFFNParams(
        expand=linear(rng, C, ratio * C),
        dw=DepthwiseConv2D(uniform(rng, (ratio * C, 3, 3), 9)),
        project=linear(rng, ratio * C, C),
    )


def conv_ffn_forward(x: Tensor, p: ConvFFNParams) -> Tensor:
    return x + p.project(ops.gelu(p.dw(p.expand(x))))


# --------------------------------------------------------------------------
# backbone


@dataclass(frozen=True)
class BackboneConfig:
    C: int = 32
    depths: tuple[int, ...] = (1, 1, 2, 1)
    d_head: int = 4
    in_channels: int = 3
    N: int = 1
    conv_type: str = "non_causal"
    traversal: str = "single"
    use_state: bool = True
    use_casf: bool = True
    scan_method: str = "sequential"

    def __post_init__(self):
        if len(self.depths) != 4:
            raise ValueError(f"backbone needs exactly 4 stages, got depths {self.depths}")
        if self.C % 2 or self.C % self.d_head:
            raise ValueError(f"C={self.C} must be even and divisible by d_head={self.d_head}")

    def stage_channels(self) -> list[int]:
        return [self.C * 2**k for k in range(4)]

    def block_config(self, stage: int) -> BlockConfig:
        c = self.stage_channels()[stage]
        return BlockConfig(
            C=c,
            N=self.N,
            G=c // self.d_head,
            conv_type=self.conv_type,
            traversal=self.traversal,
            use_state=self.use_state,
            use_casf=self.use_casf,
            scan_method=self.scan_method,
        )


@dataclass(frozen=True)
class BackboneParams:
    stem: tuple[Conv2D, Conv2D]
    stages: list[list[tuple[BlockParams, ConvFFNParams]]] = field(default_factory=list)
    downsample: list[Conv2D] = field(default_factory=list)


def init_backbone(cfg: BackboneConfig, seed: int = 0) -> BackboneParams:
    rng = np.random.default_rng(seed)
    chans = cfg.stage_channels()
    stem = (conv2d_layer(rng, cfg.in_channels, cfg.C // 2, stride=2), conv2d_layer(rng, cfg.C // 2, cfg.C, stride=2))
    stages, downs = [], []
    for k, depth in enumerate(cfg.depths):
        bc = cfg.block_config(k)
        stages.append([(init_block(bc, rng), init_conv_ffn(chans[k], rng)) for _ in range(depth)])
        if k < 3:
            downs.append(conv2d_layer(rng, chans[k], chans[k + 1], stride=2))
    return BackboneParams(stem, stages, downs)


def backbone_forward(img: Tensor, params: BackboneParams, cfg: BackboneConfig) -> list[Tensor]:
    """Feature maps at strides 4, 8, 16, 32 with channels C, 2C, 4C, 8C."""
    if img.ndim != 4 or img.shape[1] != cfg.in_channels:
        raise ShapeError(f"image must be [B,{cfg.in_channels},H,W], got {img.shape}")
    H, W = img.shape[2:]
    if H % 32 or W % 32:
        raise ShapeError(f"image extents {H}x{W} must be divisible by 32")
    x = params.stem[1](ops.gelu(params.stem[0](img)))
    outs = []
    for k, stage in enumerate(params.stages):
        bc = cfg.block_config(k)
        for blk, ffn in stage:
            x = x + deformba_block_forward(x, blk, bc)
            x = conv_ffn_forward(x, ffn)
        outs.append(x)
        if k < 3:
            x = params.downsample[k](x)
    return outs
