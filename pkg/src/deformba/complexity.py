"""Analytic parameter and FLOP accounting for cross-attention modules.

Convention: one multiply-accumulate is 2 FLOPs; activations, normalizations
and plain elementwise arithmetic are not counted. Every term of a report
carries the formula that produced it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

from .tensor import OpCounter

KINDS = ("deformba_xa", "xqssm", "deformable", "dot_product")

COUNTING_CONVENTION = (
    "FLOPs = 2 x multiply-accumulates; activations, normalizations and elementwise "
    "arithmetic excluded; params include biases"
)

# Reference workloads: (BEV extent, (cams, h, w)) -> (params K, GFLOPs) per module kind.
REFERENCE_SHAPES = (
    ((50, 50), (6, 25, 15)),
    ((100, 100), (6, 40, 24)),
    ((200, 200), (6, 50, 29)),
)
REFERENCE_COSTS = {
    "deformba_xa": ((176, 2.1), (176, 7.6), (176, 26.0)),
    "xqssm": ((239, 3.7), (239, 14.0), (239, 51.0)),
    "deformable": ((156, 3.3), (156, 12.8), (156, 49.5)),
    "dot_product": ((263, 23.9), (263, 228.8), (263, 1432.5)),
}
REFERENCE_DEFORMBA_PARAMS = 176_000
RATIO_TOLERANCE = 0.15
PARAM_TOLERANCE = 0.05


@dataclass(frozen=True)
class ModuleSpec:
    kind: str
    C: int
    heads: int = 8
    F: int = 2
    N: int = 1
    R: int = 16
    Z: int = 4
    levels: int = 1
    directions: int = 2
    hits_per_query: float | None = None  # visible reference slots per query; default Z
    C_in: int | None = None
    conv: bool = True
    bidirectional: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown module kind {self.kind!r}; expected one of {KINDS}")
        if min(self.C, self.heads, self.F, self.N, self.R, self.Z, self.levels, self.directions) <= 0:
            raise ValueError(f"module extents must be positive: {self}")

    @property
    def hits(self) -> float:
        return float(self.Z if self.hits_per_query is None else self.hits_per_query)


@dataclass(frozen=True)
class WorkloadShape:
    Hb: int
    Wb: int
    num_cams: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.Hb, self.Wb, self.num_cams, self.h, self.w) < 0:
            raise ValueError(f"workload extents must be non-negative: {self}")

    @property
    def P(self) -> int:
        return self.Hb * self.Wb

    @property
    def L(self) -> int:
        return self.num_cams * self.h * self.w


@dataclass(frozen=True)
class CostTerm:
    name: str
    side: str  # "source", "query" or "static"
    formula: str
    params: int
    flops: float


@dataclass
class CostReport:
    kind: str
    shape: dict
    terms: list[CostTerm] = field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(t.params for t in self.terms)

    @property
    def flops(self) -> float:
        return sum(t.flops for t in self.terms)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    def side_flops(self, side: str) -> float:
        return sum(t.flops for t in self.terms if t.side == side)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "shape": self.shape,
            "params": self.params,
            "flops": self.flops,
            "terms": [asdict(t) for t in self.terms],
        }


def _linear(name: str, side: str, n_in: int, n_out: int, tokens: float, sym_in: str, sym_out: str, sym_tok: str):
    return CostTerm(
        name,
        side,
        f"params {sym_in}*{sym_out}+{sym_out}; flops 2*{sym_tok}*{sym_in}*{sym_out}",
        n_in * n_out + n_out,
        2.0 * tokens * n_in * n_out,
    )


def _deformba_xa(s: ModuleSpec, w: WorkloadShape) -> list[CostTerm]:
    C, N, R, F = s.C, s.N, s.R, s.F
    C_in = s.C_in or C
    E = w.num_cams * s.Z
    off_out = E * F * 2 + F
    L, P, Eh = w.L, w.P, s.hits
    dirs = 2 if s.bidirectional else 1
    terms = [
        _linear("lin_in", "source", C_in, C, L, "C_in", "C", "L"),
        _linear("lin_V", "source", C, R + N, L, "C", "(R+N)", "L"),
        _linear("dt_proj", "source", R, C, L, "R", "C", "L"),
        CostTerm("A_log", "static", "params C*N", C * N, 0.0),
        CostTerm("outer_vk", "source", "flops 2*L*C*N", 0, 2.0 * L * C * N),
        CostTerm("scan", "source", f"flops 2*L*C*N*{dirs}", 0, 2.0 * L * C * N * dirs),
        CostTerm("ln_write", "static", "params 2*C*N", 2 * C * N, 0.0),
        _linear("lin_M", "query", C, N + C, P, "C", "(N+C)", "P"),
        _linear("lin_Q", "query", N, C, P, "N", "C", "P"),
        _linear("lin_off", "query", N, off_out, P, "N", "(E*F*2+F)", "P"),
        CostTerm("bilinear", "query", "flops 2*P*E_hit*F*(4*C)", 0, 2.0 * P * Eh * F * 4 * C * N),
        CostTerm("fuse", "query", "flops 2*P*E_hit*F*C", 0, 2.0 * P * Eh * F * C * N),
        CostTerm("D", "static", "params C", C, 0.0),
        CostTerm("ln_out", "static", "params 2*C", 2 * C, 0.0),
        _linear("lin_out", "query", C, C, P, "C", "C", "P"),
    ]
    taps = 3 if s.conv else 0
    terms.insert(1, CostTerm("dwconv1d", "source", f"params 3*C; flops 2*L*C*{taps}", 3 * C, 2.0 * L * C * taps))
    return terms


def _dot_product(s: ModuleSpec, w: WorkloadShape) -> list[CostTerm]:
    C, L, P = s.C, w.L, w.P
    return [
        _linear("q_proj", "query", C, C, P, "C", "C", "P"),
        _linear("k_proj", "source", C, C, L, "C", "C", "L"),
        _linear("v_proj", "source", C, C, L, "C", "C", "L"),
        CostTerm("qk", "query", "flops 2*P*L*C", 0, 2.0 * P * L * C),
        CostTerm("av", "query", "flops 2*P*L*C", 0, 2.0 * P * L * C),
        _linear("out_proj", "query", C, C, P, "C", "C", "P"),
    ]


def _deformable(s: ModuleSpec, w: WorkloadShape) -> list[CostTerm]:
    C, M, F, lv = s.C, s.heads, s.F, s.levels
    L, P, Eh = w.L, w.P, s.hits
    return [
        _linear("value_proj", "source", C, C, L, "C", "C", "L"),
        _linear("sampling_offsets", "query", C, M * lv * F * 2, P, "C", "(M*levels*F*2)", "P"),
        _linear("attention_weights", "query", C, M * lv * F, P, "C", "(M*levels*F)", "P"),
        CostTerm("bilinear", "query", "flops 2*P*E_hit*levels*F*(4*C)", 0, 2.0 * P * Eh * lv * F * 4 * C),
        CostTerm("weighting", "query", "flops 2*P*E_hit*levels*F*C", 0, 2.0 * P * Eh * lv * F * C),
        _linear("out_proj", "query", C, C, P, "C", "C", "P"),
    ]


def _xqssm(s: ModuleSpec, w: WorkloadShape) -> list[CostTerm]:
    C, N, R, d = s.C, s.N, s.R, s.directions
    T = w.L + w.P
    terms = [_linear("in_proj", "mixed", C, 2 * C, T, "C", "2C", "(L+P)")]
    for k in range(d):
        terms += [
            _linear(f"x_proj[{k}]", "mixed", C, R + 2 * N, T, "C", "(R+2N)", "(L+P)"),
            _linear(f"dt_proj[{k}]", "mixed", R, C, T, "R", "C", "(L+P)"),
            CostTerm(f"A_log[{k}]", "static", "params C*N", C * N, 0.0),
            CostTerm(f"scan[{k}]", "mixed", "flops 2*(L+P)*C*N * 3 (outer, recurrence, readout)", 0, 6.0 * T * C * N),
        ]
    terms += [
        CostTerm("D", "static", "params C", C, 0.0),
        _linear("out_proj", "mixed", C, C, T, "C", "C", "(L+P)"),
    ]
    return terms


_BUILDERS: dict[str, Callable[[ModuleSpec, WorkloadShape], list[CostTerm]]] = {
    "deformba_xa": _deformba_xa,
    "dot_product": _dot_product,
    "deformable": _deformable,
    "xqssm": _xqssm,
}


def count_cost(spec: ModuleSpec, shape: WorkloadShape) -> CostReport:
    terms = _BUILDERS[spec.kind](spec, shape)
    return CostReport(spec.kind, asdict(shape), terms)


# --------------------------------------------------------------------------
# reference cost table


def calibrate_width(target: int = REFERENCE_DEFORMBA_PARAMS, **spec_kwargs) -> int:
    """Width ``C`` whose Deformba-XA parameter count is closest to ``target``."""
    probe = WorkloadShape(*REFERENCE_SHAPES[0][0], *REFERENCE_SHAPES[0][1])
    best, best_err = 1, math.inf
    for C in range(8, 1025):
        p = count_cost(ModuleSpec("deformba_xa", C, **spec_kwargs), probe).params
        err = abs(p - target)
        if err < best_err:
            best, best_err = C, err
    return best


# Frozen once from calibrate_width(); tests assert it is still the optimum.
CALIBRATED_WIDTH = 234


def reference_specs(C: int = CALIBRATED_WIDTH) -> list[ModuleSpec]:
    return [
        ModuleSpec("deformba_xa", C),
        ModuleSpec("xqssm", C, N=16),
        ModuleSpec("deformable", C),
        ModuleSpec("dot_product", C),
    ]


def reference_shapes(extra: list[WorkloadShape] | None = None) -> list[WorkloadShape]:
    shapes = [WorkloadShape(b[0], b[1], *f) for b, f in REFERENCE_SHAPES]
    return shapes + list(extra or [])


def cost_table(specs: list[ModuleSpec] | None = None, extra_shapes: list[WorkloadShape] | None = None) -> dict:
    """Reports for every (module, shape) pair with the reference values alongside."""
    specs = specs or reference_specs()
    shapes = reference_shapes(extra_shapes)
    rows = []
    for spec in specs:
        for i, shape in enumerate(shapes):
            rep = count_cost(spec, shape)
            ref = REFERENCE_COSTS.get(spec.kind)
            ref_row = ref[i] if ref is not None and i < len(ref) else None
            rows.append(
                {
                    "kind": spec.kind,
                    "bev": [shape.Hb, shape.Wb],
                    "features": [shape.num_cams, shape.h, shape.w],
                    "params": rep.params,
                    "gflops": rep.gflops,
                    "reference_params_k": ref_row[0] if ref_row else None,
                    "reference_gflops": ref_row[1] if ref_row else None,
                    "report": rep.to_dict(),
                }
            )
    return {"convention": COUNTING_CONVENTION, "width": specs[0].C, "rows": rows, "checks": scaling_checks(specs)}


def scaling_checks(specs: list[ModuleSpec] | None = None) -> list[dict]:
    """Growth ratios 100x100 -> 200x200 and the calibrated parameter count."""
    specs = {s.kind: s for s in (specs or reference_specs())}
    mid, big = reference_shapes()[1:3]
    checks = []
    for kind in ("deformba_xa", "dot_product"):
        if kind not in specs:
            continue
        model = count_cost(specs[kind], big).flops / count_cost(specs[kind], mid).flops
        ref = REFERENCE_COSTS[kind][2][1] / REFERENCE_COSTS[kind][1][1]
        rel = abs(model - ref) / ref
        checks.append(
            {
                "name": f"{kind}_flop_ratio_200_vs_100",
                "measured": model,
                "reference": ref,
                "rel_error": rel,
                "tolerance": RATIO_TOLERANCE,
                "status": "pass" if rel <= RATIO_TOLERANCE else "fail",
            }
        )
    if "deformba_xa" in specs:
        params = [count_cost(specs["deformba_xa"], s).params for s in reference_shapes()]
        rel = abs(params[0] - REFERENCE_DEFORMBA_PARAMS) / REFERENCE_DEFORMBA_PARAMS
        constant = len(set(params)) == 1
        checks.append(
            {
                "name": "deformba_xa_params_calibrated",
                "measured": params[0],
                "reference": REFERENCE_DEFORMBA_PARAMS,
                "rel_error": rel,
                "tolerance": PARAM_TOLERANCE,
                "status": "pass" if rel <= PARAM_TOLERANCE else "fail",
            }
        )
        checks.append(
            {
                "name": "deformba_xa_params_shape_independent",
                "measured": params,
                "reference": None,
                "rel_error": 0.0 if constant else 1.0,
                "tolerance": 0.0,
                "status": "pass" if constant else "fail",
            }
        )
    return checks


def format_table(report: dict) -> str:
    """Aligned text table of a :func:`cost_table` result."""
    head = f"{'module':<12} {'BEV':>9} {'features':>10} {'params':>9} {'GFLOPs':>10} {'ref K':>8} {'ref GF':>9}"
    lines = [f"# {report['convention']}", f"# width C = {report['width']}", head, "-" * len(head)]
    for r in report["rows"]:
        bev = "x".join(map(str, r["bev"]))
        feat = "x".join(map(str, r["features"]))
        pk = "" if r["reference_params_k"] is None else f"{r['reference_params_k']:g}"
        pg = "" if r["reference_gflops"] is None else f"{r['reference_gflops']:g}"
        lines.append(f"{r['kind']:<12} {bev:>9} {feat:>10} {r['params']:>9d} {r['gflops']:>10.3f} {pk:>8} {pg:>9}")
    lines.append("")
    for c in report["checks"]:
        lines.append(f"[{c['status'].upper()}] {c['name']}: measured={c['measured']} reference={c['reference']}")
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# implemented paths


def block_cost(cfg, B: int, H: int, W: int) -> CostReport:
    """Analytic cost of one self-attention Deformba block as implemented."""
    C, N, R, G = cfg.C, cfg.N, cfg.R, cfg.G
    L = H * W
    dirs = 2 if cfg.traversal == "bidirectional" else 1
    tok = B * L
    terms = [
        _linear("lin_in", "source", C, C, tok, "C", "C", "B*L"),
        _linear("lin_V", "source", C, R + 2 * N, tok, "C", "(R+2N)", "B*L"),
        CostTerm("A_log", "static", "params C*N", C * N, 0.0),
        CostTerm("D", "static", "params C", C, 0.0),
        CostTerm("layer_norm", "static", "params 2*C", 2 * C, 0.0),
        CostTerm("output_project", "source", "flops 2*B*L*C*(N+1)", 0, 2.0 * tok * C * (N + 1)),
        _linear("lin_out", "source", C, C, tok, "C", "C", "B*L"),
    ]
    conv_taps = {"non_causal": 9, "causal": 3, "none": 0}[cfg.conv_type]
    terms += [
        CostTerm("dwconv2d", "static", "params C*9", 9 * C, 0.0),
        CostTerm("causal_conv1d", "static", "params C*3", 3 * C, 0.0),
        CostTerm("local_conv", "source", f"flops 2*B*L*C*{conv_taps}", 0, 2.0 * tok * C * conv_taps),
    ]
    if cfg.use_state:
        terms += [
            _linear("dt_proj", "source", R, C, tok, "R", "C", "B*L"),
            CostTerm("outer_vk", "source", "flops 2*B*L*C*N", 0, 2.0 * tok * C * N),
            CostTerm("scan", "source", f"flops 2*B*L*C*N*{dirs}", 0, 2.0 * tok * C * N * dirs),
        ]
    else:
        terms.append(CostTerm("dt_proj", "static", "params R*C+C (allocated, unused)", R * C + C, 0.0))
    if cfg.use_casf:
        CN = C * N
        terms += [
            CostTerm("offset_dwconv", "source", "params CN*9; flops 2*B*L*CN*9", 9 * CN, 2.0 * tok * CN * 9),
            CostTerm("eca_conv1d", "static", "params 3; flops 2*B*CN*3 (O(C), independent of L)", 3, 2.0 * B * CN * 3),
            _linear("head_offsets", "source", CN, 2 * G, tok, "CN", "2G", "B*L"),
            _linear("head_weights", "source", CN, G, tok, "CN", "G", "B*L"),
            CostTerm("bilinear", "source", "flops 2*B*L*G*(4*CN)", 0, 2.0 * tok * G * 4 * CN),
            CostTerm("fuse", "source", "flops 2*B*L*G*CN", 0, 2.0 * tok * G * CN),
        ]
    return CostReport("deformba_block", {"B": B, "H": H, "W": W}, terms)


def empirical_op_counter(run: Callable[[], object]) -> OpCounter:
    """Run ``run()`` with the tensor engine's MAC counter enabled."""
    with OpCounter() as counter:
        run()
    return counter
