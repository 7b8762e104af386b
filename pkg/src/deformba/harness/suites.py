"""Runnable suites behind the CLI subcommands."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from .. import complexity
from ..block import backbone_forward, init_backbone
from ..scan import run_kernel
from ..tensor import ShapeError, Tensor, dtsr
from . import checks as ck
from .config import RunConfig
from .report import Report, atomic_write

Task = Callable[[], "ck.Check | list[ck.Check]"]


def worker_count() -> int:
    """Threads for concurrent checks, capped by ``DEFORMBA_THREADS``."""
    default = min(4, os.cpu_count() or 1)
    raw = os.environ.get("DEFORMBA_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def _run_tasks(report: Report, tasks: list[Task]) -> Report:
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda t: t(), tasks))
    for res in results:
        for c in res if isinstance(res, list) else [res]:
            report.add(c)
    return report


def run_verify(cfg: RunConfig) -> Report:
    s, tol = cfg.seed, cfg.tolerances
    bc = cfg.block.build()
    grid, rig = cfg.grid.build(), cfg.rig.build()
    xa_cfg = cfg.xa.build(rig.num_cams, grid.Z)
    tasks: list[Task] = [
        lambda: ck.scan_equivalence(s, tol.scan),
        lambda: ck.linear_attention_oracle(s, tol.oracle),
        lambda: ck.decay_range(s),
        lambda: ck.casf_identity_at_init(s),
        lambda: ck.bilinear_oracle(s, tol.oracle),
        lambda: ck.fuse_oracle(s, tol.oracle),
        lambda: ck.sampling_linearity(s, tol.oracle),
        lambda: ck.weight_simplex(s, tol.oracle),
        lambda: ck.reachability(s, tol.reach),
        lambda: ck.xa_hit_checks(s),
        lambda: ck.backbone_shapes(s, cfg.backbone.build()),
        lambda: ck.mac_agreement(s, bc, cfg.block.H, cfg.block.W, tol.macs),
        lambda: ck.configured_xa(s, xa_cfg, grid, rig, cfg.xa.feature_hw, cfg.xa.batch),
    ]
    return _run_tasks(Report("verify", s), tasks)


def run_gradcheck(cfg: RunConfig) -> Report:
    s, tol = cfg.seed, cfg.tolerances
    tasks: list[Task] = [
        lambda: ck.primitive_gradchecks(s, tol.grad_op),
        lambda: ck.block_gradcheck(s, tol.grad_block, tol.kink),
        lambda: ck.xa_gradcheck(s, tol.grad_xa, tol.kink),
        lambda: ck.conv_ffn_gradcheck(s, tol.grad_op),
        lambda: ck.backbone_gradcheck(s, tol.grad_backbone, tol.kink),
    ]
    return _run_tasks(Report("gradcheck", s), tasks)


def run_forward(cfg: RunConfig, input_path: str | Path | None, out_dir: str | Path) -> Report:
    """Backbone forward pass; writes ``stage{k}.dtsr`` per stage and a shape trace.

    Raises :class:`ShapeError` when the input does not match the declared shape
    or cannot pass through four stride-2 stages.
    """
    bcfg = cfg.backbone.build()
    declared = tuple(cfg.backbone.input_shape)
    if input_path is not None:
        img = dtsr.load(input_path)
        if img.shape != declared:
            raise ShapeError(f"input {img.shape} does not match declared input_shape {declared}")
    else:
        img = Tensor(np.random.default_rng(cfg.seed).uniform(-1, 1, declared))
    params = init_backbone(bcfg, cfg.seed)
    outs = backbone_forward(img, params, bcfg)

    report = Report("forward", cfg.seed)
    out_dir = Path(out_dir)
    B, _, H, W = img.shape
    trace = [{"stage": "input", "shape": list(img.shape)}]
    for k, o in enumerate(outs):
        name = f"stage{k + 1}.dtsr"
        atomic_write(out_dir / name, dtsr.dumps(o))
        stride = 4 * 2**k
        want = [B, bcfg.C * 2**k, H // stride, W // stride]
        trace.append({"stage": f"stage{k + 1}", "shape": list(o.shape), "stride": stride, "file": name})
        report.add(ck._check(f"stage{k + 1}_shape", list(o.shape) == want, list(o.shape), want))
        report.add(ck._check(f"stage{k + 1}_finite", bool(np.all(np.isfinite(o.data))), True, True))
    report.extra["shape_trace"] = trace
    return report


def run_flops(cfg: RunConfig, out_dir: str | Path) -> Report:
    extra = [s.build() for s in cfg.extra_shapes]
    table = complexity.cost_table(extra_shapes=extra)
    out_dir = Path(out_dir)
    atomic_write(out_dir / "cost_table.json", complexity.report_json(table))
    atomic_write(out_dir / "cost_table.txt", complexity.format_table(table))
    report = Report("flops", cfg.seed)
    for c in table["checks"]:
        report.add(ck.Check(c["name"], c["status"], c["measured"], c["tolerance"], {"reference": c["reference"]}))
    calibrated = complexity.calibrate_width()
    report.add(ck._check("width_is_calibrated", calibrated == table["width"], table["width"], calibrated))
    report.extra["files"] = ["cost_table.json", "cost_table.txt"]
    return report


def run_bench(cfg: RunConfig) -> Report:
    """Wall-clock of the three scan algorithms; informational, always passes."""
    rng = np.random.default_rng(cfg.seed)
    report = Report("bench", cfg.seed)
    timings = {}
    for L in cfg.bench_lengths:
        a = rng.uniform(0.5, 1.0, (2, 16, 1, L))
        b = rng.uniform(-1, 1, (2, 16, 1, L))
        row = {}
        for method, chunk in (("sequential", None), ("parallel", None), ("chunked", max(1, int(np.sqrt(L))))):
            t0 = time.perf_counter()
            run_kernel(a, b, method, chunk)
            row[method] = time.perf_counter() - t0
        timings[str(L)] = row
        report.add(ck._check(f"bench_L{L}", True, row, None))
    report.extra["timings_seconds"] = timings
    return report
