"""Slow nested-loop references used by the verification suites.

Each function is written index by index from the defining formula and
shares no code with the vectorized implementations it checks.
"""

from __future__ import annotations

import math

import numpy as np


def scan_closed_form(alpha: np.ndarray, V: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``S_t = sum_{s<=t} (prod_{u=s+1..t} alpha_u) v_s k_s^T``."""
    B, C, N, L = alpha.shape
    S = np.zeros((B, C, N, L))
    for b in range(B):
        for c in range(C):
            for n in range(N):
                for t in range(L):
                    acc = 0.0
                    for s in range(t + 1):
                        decay = 1.0
                        for u in range(s + 1, t + 1):
                            decay *= alpha[b, c, n, u]
                        acc += decay * V[b, c, s] * K[b, n, s]
                    S[b, c, n, t] = acc
    return S


def masked_linear_attention(V: np.ndarray, K: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``y[b,c,t] = sum_{s<=t} (k_s . q_t) v_s[c]`` (unnormalized, causal mask)."""
    B, C, L = V.shape
    N = K.shape[1]
    y = np.zeros((B, C, L))
    for b in range(B):
        for t in range(L):
            for s in range(t + 1):
                score = 0.0
                for n in range(N):
                    score += K[b, n, s] * Q[b, n, t]
                for c in range(C):
                    y[b, c, t] += score * V[b, c, s]
    return y


def bilinear_point(img: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample ``img[C,H,W]`` at pixel coordinate ``(x, y)`` with zero padding."""
    C, H, W = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    out = np.zeros(C)
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            if 0 <= xx < W and 0 <= yy < H:
                wgt = (1.0 - abs(x - xx)) * (1.0 - abs(y - yy))
                out += wgt * img[:, yy, xx]
    return out


def bilinear_loop(S2d: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``P`` is ``[B, M, 2]``; returns ``[B, M, C]``."""
    B, M = P.shape[:2]
    out = np.zeros((B, M, S2d.shape[1]))
    for b in range(B):
        img = S2d[b if S2d.shape[0] == B else 0]
        for m in range(M):
            out[b, m] = bilinear_point(img, P[b, m, 0], P[b, m, 1])
    return out


def fuse_loop(samples: np.ndarray, w: np.ndarray) -> np.ndarray:
    B, H, W, G, C = samples.shape
    out = np.zeros((B, C, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                for g in range(G):
                    out[b, :, i, j] += w[b, i, j, g] * samples[b, i, j, g]
    return out


def eca_loop(U: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    B, C, H, W = U.shape
    k = kernel.size
    r = k // 2
    out = np.empty_like(U)
    for b in range(B):
        pooled = [U[b, c].sum() / (H * W) for c in range(C)]
        for c in range(C):
            z = 0.0
            for t in range(k):
                src = c + t - r
                if 0 <= src < C:
                    z += kernel[t] * pooled[src]
            out[b, c] = U[b, c] / (1.0 + math.exp(-z))
    return out


def project_point(M: np.ndarray, pt, h_img: int, w_img: int, depth_eps: float) -> tuple[float, float, float, bool]:
    """Project one ego point with one 4x4 matrix; returns ``(u, v, depth, hit)``."""
    p = [sum(M[r][c] * pt[c] for c in range(4)) for r in range(4)]
    wh = p[3] if p[3] != 0.0 else 1.0
    p = [x / wh for x in p]
    depth = p[2]
    if depth == 0.0:
        return 0.0, 0.0, depth, False
    u, v = p[0] / depth, p[1] / depth
    hit = depth > depth_eps and 0.0 <= u < w_img and 0.0 <= v < h_img
    return u, v, depth, hit


def xa_aggregate_loop(S_F, offsets, wts, uv, hit, scale_hw, F: int) -> np.ndarray:
    """``S_B[b,:,p]`` as the mean over hit slots of softmax-weighted samples.

    ``S_F [cams,C,h,w]``, ``offsets [B,P,E,F,2]``, ``wts [B,P,F]`` (already
    normalized), ``uv [P,cams,Z,2]``, ``hit [P,cams,Z]``; ``scale_hw`` maps
    an image pixel coordinate to a feature pixel coordinate.
    """
    B, P = wts.shape[:2]
    cams, C = S_F.shape[:2]
    Z = hit.shape[2]
    out = np.zeros((B, C, P))
    for b in range(B):
        for p in range(P):
            n_hit = 0
            acc = np.zeros(C)
            for cam in range(cams):
                for z in range(Z):
                    if not hit[p, cam, z]:
                        continue
                    n_hit += 1
                    ref = scale_hw(uv[p, cam, z])
                    e = cam * Z + z
                    for k in range(F):
                        x = ref[0] + offsets[b, p, e, k, 0]
                        y = ref[1] + offsets[b, p, e, k, 1]
                        acc += wts[b, p, k] * bilinear_point(S_F[cam], x, y)
            if n_hit:
                out[b, :, p] = acc / n_hit
    return out
