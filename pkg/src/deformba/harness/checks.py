"""Individual verification checks.

Every check is a pure function of its seed and configuration and returns a
:class:`Check`. Suites run them (possibly concurrently) and key results by
name, so scheduling order never shows up in a report.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .. import casf
from ..block import (
    BackboneConfig,
    BlockConfig,
    backbone_forward,
    conv_ffn_forward,
    deformba_block_forward,
    init_backbone,
    init_block,
    init_conv_ffn,
)
from ..complexity import ModuleSpec, WorkloadShape, block_cost, count_cost
from ..scan import (
    ScanInputs,
    decay_from_dt,
    init_decay,
    linear_recurrence,
    readout_final,
    scan_chunked,
    scan_parallel,
    scan_sequential,
)
from ..tensor import Conv1DChannel, GradTape, LinearLayer, OpCounter, Tensor, count_params, param_leaves, vjp_check, with_leaves
from ..tensor import ops
from ..xa import (
    DEPTH_EPS,
    BEVGrid,
    CameraRig,
    XAConfig,
    init_xa,
    lift_and_project,
    pinhole_rig,
    xa_block,
    xa_read,
    xa_write,
)
from . import oracles


@dataclass(frozen=True)
class Check:
    name: str
    status: str  # "pass" or "fail"
    measured: Any
    tolerance: Any
    detail: dict | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _check(name: str, ok: bool, measured, tolerance, detail: dict | None = None) -> Check:
    return Check(name, "pass" if ok else "fail", measured, tolerance, detail)


def _max_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


# --------------------------------------------------------------------------
# scan


def scan_equivalence(seed: int, tol: float = 1e-10, instances: int = 10) -> Check:
    rng = np.random.default_rng(seed)
    worst, shapes = 0.0, []
    for i in range(instances):
        if i == 0:
            B, C, N, L = 4, 16, 4, 256
        else:
            B, C, N, L = (int(rng.integers(1, hi + 1)) for hi in (4, 16, 4, 256))
        V = Tensor(rng.uniform(-1, 1, (B, C, L)))
        K = Tensor(rng.uniform(-1, 1, (B, N, L)))
        alpha = Tensor(rng.uniform(np.nextafter(0.0, 1.0), 1.0, (B, C, N, L)))
        inputs = ScanInputs(V, K, alpha)
        ref = scan_sequential(inputs).S.data
        worst = max(worst, _max_abs(scan_parallel(inputs).S.data, ref))
        for Q in sorted({1, 4, 8, 16, L}):
            worst = max(worst, _max_abs(scan_chunked(inputs, min(Q, L)).S.data, ref))
        shapes.append([B, C, N, L])
    return _check("scan_equivalence", worst <= tol, worst, tol, {"shapes": shapes})


def linear_attention_oracle(seed: int, tol: float = 1e-12, L: int = 64) -> Check:
    rng = np.random.default_rng(seed)
    B, C, N = 2, 3, 2
    V, K, Q = rng.uniform(-1, 1, (B, C, L)), rng.uniform(-1, 1, (B, N, L)), rng.uniform(-1, 1, (B, N, L))
    S = scan_sequential(ScanInputs(Tensor(V), Tensor(K), Tensor(np.ones((B, C, N, L))))).S.data
    per_step = np.einsum("bcnt,bnt->bct", S, Q)
    ref = oracles.masked_linear_attention(V, K, Q)
    err = _max_abs(per_step, ref)
    # Final-state readout against the unmasked double loop over all keys.
    final = readout_final(Tensor(S[..., -1]), Tensor(Q)).data
    ref_final = np.zeros((B, C, L))
    for b in range(B):
        for q in range(L):
            for t in range(L):
                ref_final[b, :, q] += float(K[b, :, t] @ Q[b, :, q]) * V[b, :, t]
    err = max(err, _max_abs(final, ref_final))
    return _check("linear_attention_oracle", err <= tol, err, tol, {"L": L})


def decay_range(seed: int, samples: int = 100_000) -> Check:
    rng = np.random.default_rng(seed)
    R, C, N = 4, 8, 2
    params = init_decay(rng, R, C, N)
    params = dataclasses.replace(params, A_log=Tensor(rng.uniform(-1, 1, (C, N))))
    dt = Tensor(rng.standard_normal((1, R, samples // R)) * 3.0)
    alpha = decay_from_dt(dt, params).data
    lo, hi = float(alpha.min()), float(alpha.max())
    return _check("decay_range", 0.0 < lo and hi < 1.0, [lo, hi], "(0, 1)", {"dt_samples": dt.size})


# --------------------------------------------------------------------------
# casf


def casf_identity_at_init(seed: int) -> Check:
    rng = np.random.default_rng(seed)
    mismatches, cases = 0, 0
    for H, W in ((1, 1), (2, 3), (4, 4), (5, 7), (8, 8)):
        for CN, G in ((4, 1), (4, 2), (8, 4), (16, 8)):
            S2d = Tensor(rng.standard_normal((2, CN, H, W)))
            net = casf.init_offset_net(rng, CN, G)
            S_Q = casf.casf_read(S2d, net)
            mismatches += int(np.count_nonzero(S_Q.data != S2d.data))
            cases += 1
    return _check("casf_identity_at_init", mismatches == 0, mismatches, 0, {"cases": cases, "comparison": "bitwise"})


def _random_positions(rng, B, M, H, W):
    P = np.stack([rng.uniform(-2, W + 1, (B, M)), rng.uniform(-2, H + 1, (B, M))], axis=-1)
    # Include exact grid points and fully outside points.
    P[:, :4] = np.floor(P[:, :4])
    P[:, 4] = (-1.0, -1.0)
    return P


def bilinear_oracle(seed: int, tol: float = 1e-12) -> Check:
    rng = np.random.default_rng(seed)
    errs = []
    for Bf, B in ((2, 2), (1, 3)):
        H, W = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        S2d = rng.standard_normal((Bf, 5, H, W))
        P = _random_positions(rng, B, 40, H, W)
        got = casf.bilinear_sample(Tensor(S2d), Tensor(P)).data
        errs.append(_max_abs(got, oracles.bilinear_loop(S2d, P)))
    err = max(errs)
    return _check("bilinear_oracle", err <= tol, err, tol)


def fuse_oracle(seed: int, tol: float = 1e-12) -> Check:
    rng = np.random.default_rng(seed)
    B, H, W, G, C = 2, 3, 4, 5, 6
    samples = rng.standard_normal((B, H, W, G, C))
    w = rng.dirichlet(np.ones(G), size=(B, H, W))
    err = _max_abs(casf.fuse(Tensor(samples), Tensor(w)).data, oracles.fuse_loop(samples, w))
    return _check("fuse_oracle", err <= tol, err, tol)


def sampling_linearity(seed: int, tol: float = 1e-12) -> Check:
    rng = np.random.default_rng(seed)
    B, C, H, W = 2, 4, 6, 5
    X, Y = rng.standard_normal((B, C, H, W)), rng.standard_normal((B, C, H, W))
    a, b = rng.uniform(-2, 2, 2)
    P = Tensor(_random_positions(rng, B, 50, H, W))
    lhs = casf.bilinear_sample(Tensor(a * X + b * Y), P).data
    rhs = a * casf.bilinear_sample(Tensor(X), P).data + b * casf.bilinear_sample(Tensor(Y), P).data
    err = _max_abs(lhs, rhs)
    return _check("sampling_linearity", err <= tol, err, tol)


def weight_simplex(seed: int, tol: float = 1e-12) -> Check:
    rng = np.random.default_rng(seed)
    worst_sum, worst_min = 0.0, math.inf
    for CN, G in ((4, 1), (8, 3), (8, 8)):
        net = casf.init_offset_net(rng, CN, G)
        heavy = LinearLayer(Tensor(rng.standard_normal((G, CN)) * 20.0), Tensor(rng.standard_normal(G) * 5.0))
        net = dataclasses.replace(net, head_weights=heavy)
        S2d = Tensor(rng.standard_normal((2, CN, 5, 6)) * 3.0)
        _, w = casf.predict_offsets_weights(S2d, net)
        worst_sum = max(worst_sum, float(np.max(np.abs(w.data.sum(axis=-1) - 1.0))))
        worst_min = min(worst_min, float(w.data.min()))
    ok = worst_sum <= tol and worst_min >= 0.0
    return _check("weight_simplex", ok, {"sum_error": worst_sum, "min_weight": worst_min}, tol)


# --------------------------------------------------------------------------
# reachability


def _forced_offset_block(cfg: BlockConfig, seed: int, dx: float, dy: float = 0.0):
    p = init_block(cfg, np.random.default_rng(seed))
    G, CN = cfg.G, cfg.C * cfg.N
    bias = np.tile([dx, dy], G)
    net = dataclasses.replace(p.offset_net, head_offsets=LinearLayer(Tensor(np.zeros((2 * G, CN))), Tensor(bias)))
    return dataclasses.replace(p, offset_net=net)


def future_jacobian(fn: Callable[[Tensor], Tensor], x: np.ndarray, seed: int) -> float:
    """Largest ``|dO_t / dx_t'|`` over all pairs with ``t' > t`` in row-major scan order."""
    B, C, H, W = x.shape
    L = H * W
    rng = np.random.default_rng(seed)
    X = Tensor(x)
    with GradTape() as tape:
        out = fn(X)
    worst = 0.0
    for t in range(L):
        for c in range(out.shape[1]):
            g = np.zeros(out.shape)
            g[0, c].reshape(-1)[t] = 1.0 + rng.uniform()
            (gx,) = tape.gradient(out, [X], seed=g)
            fut = np.abs(gx[0].reshape(C, L)[:, t + 1 :])
            if fut.size:
                worst = max(worst, float(fut.max()))
    return worst


def reachability(seed: int, tol: float = 1e-8) -> list[Check]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 4, 4, 4))
    forced_cfg = BlockConfig(C=4, G=2, conv_type="none")
    p = _forced_offset_block(forced_cfg, seed, dx=1.5)
    reach = future_jacobian(lambda X: deformba_block_forward(X, p, forced_cfg), x, seed)
    base_cfg = BlockConfig(C=4, G=2, conv_type="none", use_casf=False)
    pb = init_block(base_cfg, np.random.default_rng(seed))
    leak = future_jacobian(lambda X: deformba_block_forward(X, pb, base_cfg), x, seed)
    return [
        _check("reachability_forced_offset", reach > tol, reach, f"> {tol}", {"offset": [1.5, 0.0]}),
        _check("reachability_causal_baseline", leak == 0.0, leak, 0.0, {"use_casf": False, "conv_type": "none"}),
    ]


# --------------------------------------------------------------------------
# cross attention


def random_rig(rng: np.random.Generator) -> tuple[CameraRig, BEVGrid]:
    cams = int(rng.integers(1, 4))
    h_img, w_img = int(rng.integers(8, 33)), int(rng.integers(8, 33))
    rig = pinhole_rig(
        list(rng.uniform(-np.pi, np.pi, cams)),
        h_img,
        w_img,
        focal=float(rng.uniform(0.3, 1.5) * w_img),
        height=float(rng.uniform(0.5, 2.5)),
        offsets=[tuple(rng.uniform(-1, 1, 2)) for _ in range(cams)],
    )
    # A nonzero scale of the whole matrix leaves the projection unchanged
    # after homogeneous normalization; it exercises the w-divide.
    scales = rng.choice([-1.0, 1.0], cams) * rng.uniform(0.5, 2.0, cams)
    rig = CameraRig(rig.lidar2img * scales[:, None, None], h_img, w_img)
    Z = int(rng.integers(1, 5))
    span = float(rng.uniform(4, 20))
    grid = BEVGrid(
        int(rng.integers(2, 6)),
        int(rng.integers(2, 6)),
        (-span, span),
        (-span, span),
        tuple(np.sort(rng.uniform(-2, 3, Z)) + np.arange(Z) * 1e-3),
    )
    return rig, grid


def _hit_mismatches(grid: BEVGrid, rig: CameraRig, hits) -> int:
    bad = 0
    for p, (x, y) in enumerate(grid.cell_centers()):
        for cam in range(rig.num_cams):
            for z, zh in enumerate(grid.z_heights):
                u, v, depth, hit = oracles.project_point(rig.lidar2img[cam], (x, y, zh, 1.0), rig.h_img, rig.w_img, DEPTH_EPS)
                if bool(hits.hit[p, cam, z]) != hit:
                    bad += 1
                elif hit and not (
                    math.isclose(hits.uv[p, cam, z, 0], u, rel_tol=1e-9, abs_tol=1e-9)
                    and math.isclose(hits.uv[p, cam, z, 1], v, rel_tol=1e-9, abs_tol=1e-9)
                ):
                    bad += 1
    return bad


def xa_hit_checks(seed: int, rigs: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    mismatches, accounting_errors, zero_hit_queries, nonfinite, total_hits = 0, 0, 0, 0, 0
    for r in range(rigs):
        rig, grid = random_rig(rng)
        if r == 0:
            # One camera looking along -x at a grid with x > 0: every pillar misses.
            rig = pinhole_rig([np.pi], rig.h_img, rig.w_img)
            grid = BEVGrid(grid.Hb, grid.Wb, (5.0, 9.0), (-1.0, 1.0), grid.z_heights)
        hits = lift_and_project(grid, rig)
        mismatches += _hit_mismatches(grid, rig, hits)
        per_query = hits.hits_per_query
        total_hits += int(per_query.sum())

        F = int(rng.integers(1, 4))
        cfg = XAConfig(C=4, F=F, num_cams=rig.num_cams, Z=grid.Z)
        p = init_xa(cfg, int(rng.integers(0, 2**31)))
        p = dataclasses.replace(p, lin_off=_jitter(p.lin_off, rng, 0.5))
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        B = int(rng.integers(1, 3))
        mem = xa_write(Tensor(rng.standard_normal((rig.num_cams, 4, h, w))), p, cfg)
        M = Tensor(rng.standard_normal((B, 4, grid.P)))
        with OpCounter() as counter:
            out = xa_read(mem, M, hits, p, cfg)
        for q in range(grid.P):
            expected = int(per_query[q]) * F * B
            if counter.samples_by_owner.get(q, 0) != expected:
                accounting_errors += 1
        if counter.samples != int(per_query.sum()) * F * B:
            accounting_errors += 1
        zero_hit_queries += int(np.sum(per_query == 0))
        nonfinite += int(np.count_nonzero(~np.isfinite(out.data)))
    return [
        _check("xa_hit_soundness", mismatches == 0, mismatches, 0, {"rigs": rigs, "hits": total_hits}),
        _check("xa_sample_accounting", accounting_errors == 0, accounting_errors, 0, {"rule": "samples(q) = |E_hit(q)| * F * B"}),
        _check(
            "xa_zero_hit_finite",
            nonfinite == 0 and zero_hit_queries > 0,
            {"nonfinite": nonfinite, "zero_hit_queries": zero_hit_queries},
            {"nonfinite": 0, "zero_hit_queries": "> 0"},
        ),
    ]


def configured_xa(seed: int, xa_cfg, grid: BEVGrid, rig: CameraRig, feature_hw: tuple[int, int], batch: int) -> list[Check]:
    """Run the configured rig and grid through one XA block."""
    hits = lift_and_project(grid, rig)
    bad = _hit_mismatches(grid, rig, hits)
    rng = np.random.default_rng(seed)
    p = init_xa(xa_cfg, seed)
    feats = Tensor(rng.standard_normal((rig.num_cams, xa_cfg.C_in) + tuple(feature_hw)))
    M = Tensor(rng.standard_normal((batch, xa_cfg.C, grid.P)))
    with OpCounter() as counter:
        out = xa_read(xa_write(feats, p, xa_cfg), M, hits, p, xa_cfg)
    want = int(hits.hits_per_query.sum()) * xa_cfg.F * batch
    finite = bool(np.all(np.isfinite(out.data)))
    return [
        _check("xa_config_hit_soundness", bad == 0, bad, 0, {"hits": int(hits.hit.sum())}),
        _check("xa_config_output", finite and out.shape == (batch, xa_cfg.C, grid.P), list(out.shape), [batch, xa_cfg.C, grid.P]),
        _check("xa_config_sample_count", counter.samples == want, counter.samples, want),
    ]


def _jitter(layer: LinearLayer, rng: np.random.Generator, bias: float, spread: float = 0.1, w_scale: float = 0.05) -> LinearLayer:
    """Small random weights and a bias of ``bias +- spread`` (moves offset heads off zero)."""
    return LinearLayer(
        Tensor(rng.uniform(-w_scale, w_scale, layer.weight.shape)),
        Tensor(bias + rng.uniform(-spread, spread, layer.bias.shape)),
    )


# --------------------------------------------------------------------------
# backbone and costs


def backbone_shapes(seed: int, cfg: BackboneConfig | None = None, size: int = 64) -> Check:
    cfg = cfg or BackboneConfig()
    params = init_backbone(cfg, seed)
    img = Tensor(np.random.default_rng(seed).standard_normal((1, cfg.in_channels, size, size)))
    outs = backbone_forward(img, params, cfg)
    got = [list(o.shape) for o in outs]
    want = [[1, cfg.C * 2**k, size // (4 * 2**k), size // (4 * 2**k)] for k in range(4)]
    return _check("backbone_shapes", got == want, got, want)


def mac_agreement(seed: int, block_cfg: BlockConfig, H: int, W: int, tol: float = 0.05) -> list[Check]:
    rng = np.random.default_rng(seed)
    p = init_block(block_cfg, rng)
    T = Tensor(rng.standard_normal((1, block_cfg.C, H, W)))
    with OpCounter() as counter:
        deformba_block_forward(T, p, block_cfg)
    analytic = block_cost(block_cfg, 1, H, W).flops
    rel_block = abs(counter.total - analytic) / analytic

    grid = BEVGrid(3, 3, (-6.0, 6.0), (-6.0, 6.0), (0.0, 1.0, 2.0))
    rig = pinhole_rig([0.0, 2.0], 8, 8, focal=4.0)
    xcfg = XAConfig(C=8, num_cams=2, Z=3)
    xp = init_xa(xcfg, seed)
    hits = lift_and_project(grid, rig)
    F_in = Tensor(rng.standard_normal((2, 8, 8, 8)))
    M = Tensor(rng.standard_normal((1, 8, grid.P)))
    with OpCounter() as xc:
        xa_read(xa_write(F_in, xp, xcfg), M, hits, xp, xcfg)
    spec = ModuleSpec("deformba_xa", 8, R=xcfg.R, F=xcfg.F, Z=3, hits_per_query=float(hits.hits_per_query.mean()))
    rep = count_cost(spec, WorkloadShape(3, 3, 2, 8, 8))
    rel_xa = abs(xc.total - rep.flops) / rep.flops
    return [
        _check("macs_block_vs_analytic", rel_block <= tol, rel_block, tol, {"instrumented": counter.total, "analytic": analytic}),
        _check("macs_xa_vs_analytic", rel_xa <= tol, rel_xa, tol, {"instrumented": xc.total, "analytic": rep.flops}),
        _check("params_xa_vs_store", rep.params == count_params(xp), rep.params, count_params(xp)),
    ]


# --------------------------------------------------------------------------
# gradient checks


def primitive_gradchecks(seed: int, tol: float = 1e-5) -> list[Check]:
    """One central-difference check per differentiable primitive."""
    rng = np.random.default_rng(seed)

    def r(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape))

    cases: dict[str, tuple[Callable[..., Tensor], list[Tensor]]] = {
        "add": (ops.add, [r(2, 3), r(3)]),
        "sub": (ops.sub, [r(2, 3), r(2, 1)]),
        "mul": (ops.mul, [r(2, 3), r(1, 3)]),
        "scale": (lambda a: ops.scale(a, -1.7), [r(3, 2)]),
        "matmul": (ops.matmul, [r(2, 3, 4), r(4, 5)]),
        "sigmoid": (ops.sigmoid, [r(7, lo=-4, hi=4)]),
        "silu": (ops.silu, [r(7, lo=-4, hi=4)]),
        "softplus": (ops.softplus, [r(7, lo=-4, hi=4)]),
        "exp": (ops.exp, [r(7)]),
        "gelu": (ops.gelu, [r(7, lo=-4, hi=4)]),
        "layer_norm": (ops.layer_norm, [r(3, 5), r(5), r(5)]),
        "softmax": (lambda x: ops.softmax(x, axis=1), [r(2, 4, 3)]),
        "reshape": (lambda x: ops.reshape(x, (3, 4)), [r(2, 6)]),
        "transpose": (lambda x: ops.transpose(x, (2, 0, 1)), [r(2, 3, 4)]),
        "flip": (lambda x: ops.flip(x, -1), [r(2, 5)]),
        "getitem": (lambda x: x[:, 1:3], [r(2, 4)]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), [r(2, 2), r(2, 3)]),
        "broadcast_to": (lambda x: ops.broadcast_to(x, (3, 2, 4)), [r(2, 1)]),
        "sum": (lambda x: ops.sum(x, axis=1), [r(3, 4)]),
        "mean": (lambda x: ops.mean(x, axis=(0, 2)), [r(2, 3, 4)]),
        "depthwise_conv2d": (ops.depthwise_conv2d, [r(1, 2, 4, 5), r(2, 3, 3)]),
        "depthwise_conv1d": (lambda x, k: ops.depthwise_conv1d(x, k), [r(2, 3, 6), r(3, 3)]),
        "depthwise_conv1d_causal": (lambda x, k: ops.depthwise_conv1d(x, k, causal=True), [r(2, 3, 6), r(3, 3)]),
        "conv1d_channel": (ops.conv1d_channel, [r(2, 6), r(3)]),
        "conv2d": (lambda x, w: ops.conv2d(x, w, stride=2, padding=1), [r(1, 2, 5, 5), r(3, 2, 3, 3)]),
        "outer": (ops.outer, [r(2, 3, 4), r(2, 2, 4)]),
        "linear_recurrence": (
            linear_recurrence,
            [r(2, 3, 6, lo=0.05, hi=1.0), r(2, 3, 6)],
        ),
        "linear_recurrence_parallel": (
            lambda a, u: linear_recurrence(a, u, "parallel"),
            [r(2, 3, 7, lo=0.05, hi=1.0), r(2, 3, 7)],
        ),
        "bilinear_sample": (
            casf.bilinear_sample,
            [r(2, 3, 4, 5), Tensor(np.round(rng.uniform(-1, 5, (2, 6, 2))) + rng.uniform(0.1, 0.9, (2, 6, 2)))],
        ),
        "fuse": (casf.fuse, [r(1, 2, 3, 4, 5), Tensor(rng.dirichlet(np.ones(4), size=(1, 2, 3)))]),
        "output_project": (casf.output_project, [r(2, 3, 2, 5), r(2, 2, 5), r(2, 3, 5), r(3)]),
        "eca": (lambda u, k: casf.eca(u, Conv1DChannel(k)), [r(2, 5, 3, 3), r(3)]),
    }
    out = []
    for name in sorted(cases):
        fn, inputs = cases[name]
        err = vjp_check(fn, inputs, probe_seed=seed)
        out.append(_check(f"grad_op_{name}", err <= tol, err, tol))
    return out


def _grouped_gradcheck(prefix, fn, x, params, tol, seed, max_probes=None) -> list[Check]:
    """Gradcheck the input and each top-level parameter group separately."""
    groups = [f.name for f in dataclasses.fields(params)]
    leaves_by_group = [param_leaves(getattr(params, g)) for g in groups]
    flat = [t for ls in leaves_by_group for t in ls]

    def run(x_, *leaves):
        return fn(x_, with_leaves(params, leaves))

    errs = vjp_check(run, [x] + flat, probe_seed=seed, max_probes=max_probes, per_input=True)
    checks = [_check(f"{prefix}_input", errs[0] <= tol, errs[0], tol)]
    i = 1
    for g, ls in zip(groups, leaves_by_group):
        if not ls:
            continue
        e = max(errs[i : i + len(ls)])
        i += len(ls)
        checks.append(_check(f"{prefix}_{g}", e <= tol, e, tol))
    return checks


def kink_safe_block(seed: int, cfg: BlockConfig, x: Tensor, min_dist: float, attempts: int = 20):
    """Block params with small random offsets whose probe points avoid integer kinks."""
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        p = init_block(cfg, rng)
        net = dataclasses.replace(p.offset_net, head_offsets=_jitter(p.offset_net.head_offsets, rng, 0.37))
        net = dataclasses.replace(net, head_weights=_jitter(net.head_weights, rng, 0.0, 0.3, w_scale=0.3))
        p = dataclasses.replace(p, offset_net=net)
        with OpCounter() as c:
            deformba_block_forward(x, p, cfg)
        if c.min_kink >= min_dist:
            return p, c.min_kink
    raise RuntimeError("no kink-free parameter draw found")


def block_gradcheck(seed: int, tol: float = 1e-5, min_dist: float = 1e-3) -> list[Check]:
    cfg = BlockConfig(C=4, G=2)
    x = Tensor(np.random.default_rng(seed).standard_normal((1, 4, 4, 4)))
    p, dist = kink_safe_block(seed, cfg, x, min_dist)
    checks = _grouped_gradcheck("grad_block", lambda x_, p_: deformba_block_forward(x_, p_, cfg), x, p, tol, seed)
    checks.append(_check("grad_block_kink_distance", dist >= min_dist, dist, min_dist))
    return checks


def toy_xa_setup(seed: int, min_dist: float = 1e-3, attempts: int = 20):
    """1-camera rig over a 4x4 feature map with every query visible."""
    rig = pinhole_rig([0.0], 4, 4, focal=2.0)
    grid = BEVGrid(2, 2, (2.0, 6.0), (-2.0, 2.0), (0.5, 1.7))
    cfg = XAConfig(C=4, F=2, num_cams=1, Z=2)
    rng = np.random.default_rng(seed)
    F_in = Tensor(rng.standard_normal((1, 4, 4, 4)))
    M = Tensor(rng.standard_normal((1, 4, grid.P)))
    for _ in range(attempts):
        p = init_xa(cfg, int(rng.integers(0, 2**31)))
        p = dataclasses.replace(p, lin_off=_jitter(p.lin_off, rng, 0.3, 0.05))
        with OpCounter() as c:
            xa_read(xa_write(F_in, p, cfg), M, lift_and_project(grid, rig), p, cfg)
        if c.min_kink >= min_dist:
            return rig, grid, cfg, p, F_in, M, c.min_kink
    raise RuntimeError("no kink-free parameter draw found")


def xa_gradcheck(seed: int, tol: float = 1e-4, min_dist: float = 1e-3) -> list[Check]:
    rig, grid, cfg, p, F_in, M, dist = toy_xa_setup(seed, min_dist)
    checks = _grouped_gradcheck("grad_xa", lambda f_, p_: xa_block(f_, M, grid, rig, p_, cfg), F_in, p, tol, seed)
    checks += _grouped_gradcheck("grad_xa_queries", lambda m_, p_: xa_block(F_in, m_, grid, rig, p_, cfg), M, p, tol, seed)[:1]
    checks.append(_check("grad_xa_kink_distance", dist >= min_dist, dist, min_dist))
    return checks


def conv_ffn_gradcheck(seed: int, tol: float = 1e-5) -> Check:
    rng = np.random.default_rng(seed)
    p = init_conv_ffn(3, rng)
    x = Tensor(rng.standard_normal((1, 3, 3, 3)))
    err = max(c.measured for c in _grouped_gradcheck("grad_conv_ffn", lambda x_, p_: conv_ffn_forward(x_, p_), x, p, tol, seed))
    return _check("grad_conv_ffn", err <= tol, err, tol)


def backbone_gradcheck(seed: int, tol: float = 1e-4, min_dist: float = 1e-3, probes: int = 24) -> Check:
    cfg = BackboneConfig(C=8, d_head=4)
    rng = np.random.default_rng(seed)
    params = init_backbone(cfg, seed)
    # Nudge every offset head off zero so sampling goes through fractional positions.
    for _ in range(20):
        leaves = []
        for stage in params.stages:
            for blk, ffn in stage:
                net = dataclasses.replace(blk.offset_net, head_offsets=_jitter(blk.offset_net.head_offsets, rng, 0.37))
                leaves.append((dataclasses.replace(blk, offset_net=net), ffn))
        it = iter(leaves)
        cand = dataclasses.replace(params, stages=[[next(it) for _ in stage] for stage in params.stages])
        img = Tensor(rng.standard_normal((1, 3, 32, 32)))
        with OpCounter() as c:
            backbone_forward(img, cand, cfg)
        if c.min_kink >= min_dist:
            break
    else:
        raise RuntimeError("no kink-free parameter draw found")

    def fn(x):
        return ops.concat([ops.reshape(o, (1, -1)) for o in backbone_forward(x, cand, cfg)], axis=1)

    err = vjp_check(fn, [img], probe_seed=seed, max_probes=probes)
    return _check("grad_backbone", err <= tol, err, tol, {"input": [1, 3, 32, 32], "probes": probes, "kink_distance": c.min_kink})
