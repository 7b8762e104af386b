import dataclasses

import numpy as np
import pytest
from scipy.special import expit

from deformba.block import (
    BackboneConfig,
    BlockConfig,
    ConvFFNParams,
    backbone_forward,
    conv_ffn_forward,
    deformba_block_forward,
    init_backbone,
    init_block,
    init_conv_ffn,
)
from deformba.harness import checks
from deformba.harness.oracles import scan_closed_form
from deformba.tensor import LinearLayer, ShapeError, Tensor


def _silu(x):
    return x * expit(x)


def reference_block(x, p, cfg):
    """Dense numpy transcription of the block with the identity state read."""
    B, C, H, W = x.shape
    N, R, L = cfg.N, cfg.R, H * W
    lin = lambda layer, a: np.einsum("oi,bil->bol", layer.weight.data, a) + layer.bias.data[None, :, None]
    vt = lin(p.lin_in, x.reshape(B, C, L))
    V = _silu(vt)
    proj = lin(p.lin_V, V)
    dt, K, Q = proj[:, :R], proj[:, R : R + N], proj[:, R + N :]
    delta = np.logaddexp(0.0, lin(p.decay.dt_proj, dt))
    alpha = np.exp(delta[:, :, None, :] * -np.exp(p.decay.A_log.data)[None, :, :, None])
    S = scan_closed_form(alpha, V, K)
    O = np.einsum("bcnl,bnl->bcl", S, Q) + V * p.D.data[None, :, None]
    mu = O.mean(axis=1, keepdims=True)
    var = ((O - mu) ** 2).mean(axis=1, keepdims=True)
    y = (O - mu) / np.sqrt(var + 1e-6) * p.ln_gamma.data[None, :, None] + p.ln_beta.data[None, :, None]
    return lin(p.lin_out, y).reshape(B, C, H, W)


@pytest.mark.parametrize(
    "kw,err",
    [
        (dict(C=6, G=4), "divide"),
        (dict(C=4, G=2, conv_type="diagonal"), "conv_type"),
        (dict(C=4, G=2, traversal="spiral"), "traversal"),
        (dict(C=0), "positive"),
        (dict(C=4, G=2, R=0), "rank"),
    ],
)
def test_block_config_validation(kw, err):
    with pytest.raises(ValueError, match=err):
        BlockConfig(**kw)


def test_dt_rank_default():
    assert BlockConfig(C=4, G=2).R == 1
    assert BlockConfig(C=64, G=8).R == 4
    assert BlockConfig(C=65, G=5).R == 5


@pytest.mark.parametrize("N", [1, 2])
def test_block_matches_dense_reference(N):
    cfg = BlockConfig(C=4, N=N, G=2, conv_type="none")
    rng = np.random.default_rng(N)
    p = init_block(cfg, rng)
    x = rng.standard_normal((2, 4, 3, 5))
    got = deformba_block_forward(Tensor(x), p, cfg).data
    assert np.max(np.abs(got - reference_block(x, p, cfg))) <= 1e-10
    # zero-init offsets make the deformable read the identity, bitwise
    off = deformba_block_forward(Tensor(x), p, dataclasses.replace(cfg, use_casf=False)).data
    assert np.array_equal(got, off)


@pytest.mark.parametrize("method", ["parallel", "chunked"])
def test_block_scan_methods_agree(method):
    cfg = BlockConfig(C=4, G=2)
    rng = np.random.default_rng(3)
    p = init_block(cfg, rng)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)))
    ref = deformba_block_forward(x, p, cfg).data
    alt = deformba_block_forward(x, p, dataclasses.replace(cfg, scan_method=method, chunk=5)).data
    assert np.max(np.abs(alt - ref)) <= 1e-10


def test_no_state_no_conv_is_tokenwise():
    """Without the scan or the spatial conv, each output token sees only its own input."""
    cfg = BlockConfig(C=4, G=2, conv_type="none", use_state=False, use_casf=False)
    rng = np.random.default_rng(4)
    p = init_block(cfg, rng)
    x = rng.standard_normal((1, 4, 3, 3))
    base = deformba_block_forward(Tensor(x), p, cfg).data
    x2 = x.copy()
    x2[0, :, 1, 2] += 1.0
    diff = np.abs(deformba_block_forward(Tensor(x2), p, cfg).data - base).max(axis=1)[0]
    mask = np.zeros((3, 3), bool)
    mask[1, 2] = True
    assert np.all(diff[~mask] == 0.0) and diff[1, 2] > 0


def test_single_traversal_is_causal_without_deformation():
    cfg = BlockConfig(C=4, G=2, conv_type="causal", use_casf=False)
    rng = np.random.default_rng(5)
    p = init_block(cfg, rng)
    x = rng.standard_normal((1, 4, 3, 3))
    fn = lambda t: deformba_block_forward(t, p, cfg)
    assert checks.future_jacobian(fn, x, 0) == 0.0


@pytest.mark.parametrize("conv_type", ["non_causal", "causal", "none"])
def test_bidirectional_symmetric_on_single_token(conv_type):
    # With one token both sweeps coincide, so the mean equals the forward sweep.
    cfg = BlockConfig(C=4, G=2, conv_type=conv_type)
    rng = np.random.default_rng(6)
    p = init_block(cfg, rng)
    x = Tensor(rng.standard_normal((2, 4, 1, 1)))
    a = deformba_block_forward(x, p, cfg).data
    b = deformba_block_forward(x, p, dataclasses.replace(cfg, traversal="bidirectional")).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_bidirectional_memoryless_limit_palindrome():
    cfg = BlockConfig(C=4, G=2, conv_type="none")
    rng = np.random.default_rng(7)
    p = init_block(cfg, rng)
    p = dataclasses.replace(p, decay=dataclasses.replace(p.decay, A_log=Tensor(np.full((4, 1), 8.0))))
    row = rng.standard_normal((1, 4, 1, 3))
    x = np.concatenate([row, row[..., ::-1][..., 1:]], axis=-1)  # palindrome along the scan order
    single = deformba_block_forward(Tensor(x), p, cfg).data
    both = deformba_block_forward(Tensor(x), p, dataclasses.replace(cfg, traversal="bidirectional")).data
    assert np.max(np.abs(single - both)) <= 1e-9


def test_block_rejects_wrong_channels():
    cfg = BlockConfig(C=4, G=2)
    p = init_block(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        deformba_block_forward(Tensor(np.zeros((1, 3, 2, 2))), p, cfg)


def test_block_gradcheck_passes():
    res = checks.block_gradcheck(0)
    assert all(c.passed for c in res), [c for c in res if not c.passed]


# --------------------------------------------------------------------------
# ConvFFN


def test_conv_ffn_zero_projection_is_identity():
    rng = np.random.default_rng(8)
    p = init_conv_ffn(3, rng)
    p = dataclasses.replace(p, project=LinearLayer(Tensor(np.zeros((3, 12))), Tensor(np.zeros(3))))
    x = rng.standard_normal((1, 3, 4, 4))
    assert np.array_equal(conv_ffn_forward(Tensor(x), p).data, x)


def test_conv_ffn_shapes_and_gradient():
    p = init_conv_ffn(5, np.random.default_rng(9), ratio=2)
    assert isinstance(p, ConvFFNParams) and p.expand.weight.shape == (10, 5)
    assert checks.conv_ffn_gradcheck(1).passed


# --------------------------------------------------------------------------
# backbone


def test_backbone_feature_pyramid():
    cfg = BackboneConfig(C=8, depths=(1, 1, 1, 1))
    feats = backbone_forward(Tensor(np.zeros((1, 3, 64, 32))), init_backbone(cfg, 0), cfg)
    assert [f.shape for f in feats] == [(1, 8, 16, 8), (1, 16, 8, 4), (1, 32, 4, 2), (1, 64, 2, 1)]
    assert all(np.all(np.isfinite(f.data)) for f in feats)


def test_backbone_stage_groups_follow_head_dim():
    cfg = BackboneConfig(C=8, d_head=4)
    assert [cfg.block_config(k).G for k in range(4)] == [2, 4, 8, 16]


@pytest.mark.parametrize("hw", [(60, 60), (64, 48)])
def test_backbone_rejects_indivisible(hw):
    cfg = BackboneConfig(C=8)
    with pytest.raises(ShapeError):
        backbone_forward(Tensor(np.zeros((1, 3) + hw)), init_backbone(cfg, 0), cfg)


def test_backbone_rejects_channels():
    cfg = BackboneConfig(C=8)
    with pytest.raises(ShapeError):
        backbone_forward(Tensor(np.zeros((1, 1, 32, 32))), init_backbone(cfg, 0), cfg)


@pytest.mark.parametrize("kw", [dict(depths=(1, 1, 1)), dict(C=6, d_head=4), dict(C=7)])
def test_backbone_config_validation(kw):
    with pytest.raises(ValueError):
        BackboneConfig(**kw)


def test_backbone_gradcheck_passes():
    assert checks.backbone_gradcheck(0).passed
