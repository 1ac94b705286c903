import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoise_nas.autodiff import Tensor, ops
from denoise_nas.autodiff.gradcheck import check_gradients
from denoise_nas.costs import block_cost
from denoise_nas.nn import (BlockKind, CandidateSpec, ConvBNReLUBlock, NAFBlock, UNetConfig, build_unet,
                            fold_conv_bn, load_params, make_block, make_candidate, reference_base_config,
                            save_params)


def randomize(module, rng, scale=0.3):
    for _, p in module.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * scale


# ----------------------------------------------------------------- kinds and specs


def test_four_kinds():
    assert [k.label for k in BlockKind] == ["Alt0", "Alt1", "Alt2", "Alt3"]


@pytest.mark.parametrize("text,kind", [("Alt3", BlockKind.ALT3), ("alternative-1", BlockKind.ALT1), ("2", BlockKind.ALT2)])
def test_kind_parse(text, kind):
    assert BlockKind.parse(text) is kind


def test_candidate_spec_roundtrip_and_validation():
    spec = CandidateSpec.parse("6xAlt2")
    assert spec == CandidateSpec(BlockKind.ALT2, 6) and spec.id == "6xAlt2"
    with pytest.raises(ValueError):
        CandidateSpec(BlockKind.ALT0, 0)
    with pytest.raises(ValueError):
        CandidateSpec.parse("Alt2")


# ----------------------------------------------------------------- block forward


@pytest.mark.parametrize("kind", list(BlockKind))
def test_identity_init_passes_input_through(rng, kind):
    x = rng.standard_normal((2, 8, 6, 6))
    block = make_block(kind, 8, rng)
    block.identity_init()
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", list(BlockKind))
def test_shape_preserved(rng, kind):
    block = make_block(kind, 8, rng)
    randomize(block, rng)
    assert block(Tensor(rng.standard_normal((1, 8, 16, 16)))).shape == (1, 8, 16, 16)


@pytest.mark.parametrize("kind", list(BlockKind))
def test_width_mismatch_rejected(rng, kind):
    with pytest.raises(ValueError, match="channels"):
        make_block(kind, 8, rng)(Tensor(np.zeros((1, 4, 4, 4))))


def test_odd_gate_width_rejected():
    with pytest.raises(ValueError, match="even"):
        NAFBlock(3, dw_expand=1)


def test_alt1_differs_from_alt0_on_constant_input(rng):
    alt0 = NAFBlock(4, rng=np.random.default_rng(5))
    alt1 = NAFBlock(4, use_ln=False, rng=np.random.default_rng(5))
    x = Tensor(np.full((1, 4, 5, 5), 0.7))
    assert not np.allclose(alt0(x).data, alt1(x).data)


def test_alt2_matches_alt0_with_unit_attention(rng):
    alt0 = NAFBlock(8, rng=np.random.default_rng(3))
    alt2 = NAFBlock(8, use_sca=False, rng=np.random.default_rng(3))
    randomize(alt0, rng)
    state = {k: v for k, v in alt0.state_dict().items() if not k.startswith("sca.")}
    alt2.load_state_dict(state)
    alt0.sca.weight.data[...] = 0.0
    alt0.sca.bias.data[...] = 1.0
    x = Tensor(rng.standard_normal((2, 8, 6, 6)))
    np.testing.assert_allclose(alt0(x).data, alt2(x).data, atol=1e-13)


def test_alt3_zero_kernel_is_identity(rng):
    block = ConvBNReLUBlock(6, rng=rng)
    block.conv.weight.data[...] = 0.0
    block.conv.bias.data[...] = 0.0
    x = rng.standard_normal((2, 6, 5, 5))
    for mode in (True, False):
        block.train(mode)
        np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_alt3_formula(rng):
    block = ConvBNReLUBlock(4, rng=rng).eval()
    block.bn.running_mean[...] = rng.standard_normal(4)
    block.bn.running_var[...] = rng.uniform(0.5, 2, 4)
    randomize(block, rng)
    x = rng.standard_normal((1, 4, 5, 5))
    conv = ops.conv2d(Tensor(x), block.conv.weight, block.conv.bias, 1, 1, 4).data
    bn = ((conv - block.bn.running_mean.reshape(1, -1, 1, 1)) / np.sqrt(block.bn.running_var + block.bn.eps).reshape(1, -1, 1, 1)
          * block.bn.weight.data.reshape(1, -1, 1, 1) + block.bn.bias.data.reshape(1, -1, 1, 1))
    np.testing.assert_allclose(block(Tensor(x)).data, x + np.maximum(bn, 0), atol=1e-12)


@pytest.mark.parametrize("kind", list(BlockKind))
def test_block_gradients(rng, kind):
    block = make_block(kind, 4, rng)
    randomize(block, rng)
    x = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
    w = rng.standard_normal((2, 4, 5, 5))
    err = check_gradients(lambda: ops.sum(ops.mul(block(x), w)), [x, *block.parameters()])
    assert err < 1e-4


# ----------------------------------------------------------------- cost ordering


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([4, 8, 16, 32, 64, 128]), st.sampled_from([8, 16, 32, 64, 128, 256]))
def test_mac_ordering(c, hw):
    m = {k: block_cost(k, c, hw, hw).macs for k in BlockKind}
    assert m[BlockKind.ALT3] < m[BlockKind.ALT2] < m[BlockKind.ALT0]
    assert m[BlockKind.ALT1] < m[BlockKind.ALT0]
    assert m[BlockKind.ALT3] < m[BlockKind.ALT1]


@pytest.mark.parametrize("kind", list(BlockKind))
def test_analytic_params_match_module(rng, kind):
    block = make_block(kind, 16, rng)
    assert block_cost(kind, 16, 8, 8).params == block.num_parameters()


# ----------------------------------------------------------------- folding


def test_fold_with_unit_statistics_is_noop(rng):
    w, b = rng.standard_normal((4, 1, 3, 3)), rng.standard_normal(4)
    fw, fb = fold_conv_bn((w, b), (np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), 0.0))
    np.testing.assert_array_equal(fw, w)
    np.testing.assert_array_equal(fb, b)


def test_fold_scales_kernel_per_output_channel(rng):
    w = rng.standard_normal((5, 3, 3, 3))
    gamma, beta = rng.standard_normal(5), rng.standard_normal(5)
    mean, var, eps = rng.standard_normal(5), rng.uniform(0.1, 3, 5), 1e-5
    fw, fb = fold_conv_bn((w, None), (gamma, beta, mean, var, eps))
    for o in range(5):
        s = gamma[o] / np.sqrt(var[o] + eps)
        np.testing.assert_allclose(fw[o], w[o] * s, rtol=1e-14)
        assert fb[o] == pytest.approx(beta[o] - mean[o] * s, rel=1e-14)


def test_fold_matches_conv_then_bn_on_random_cases():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        c = int(r.integers(1, 9))
        depthwise = bool(r.integers(0, 2))
        block = ConvBNReLUBlock(c, depthwise=depthwise, rng=r).eval()
        randomize(block, r, scale=1.0)
        block.bn.running_mean[...] = r.standard_normal(c)
        block.bn.running_var[...] = r.uniform(0.01, 4.0, c)
        x = Tensor(r.standard_normal((2, c, 7, 7)))
        worst = max(worst, np.abs(block(x).data - block.folded()(x).data).max())
    assert worst < 1e-5


def test_fold_rejects_nonpositive_variance():
    with pytest.raises(ValueError, match="positive"):
        fold_conv_bn((np.ones((1, 1, 3, 3)), None), (np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]), 1e-5))


def test_fold_requires_eval_mode(rng):
    with pytest.raises(RuntimeError):
        ConvBNReLUBlock(2, rng=rng).folded()


# ----------------------------------------------------------------- U-Net


def test_unet_identity_and_shape(rng):
    net = build_unet(UNetConfig(width=8))
    x = rng.standard_normal((1, 3, 64, 64))
    out = net(Tensor(x)).data
    assert out.shape == (1, 3, 64, 64)
    np.testing.assert_array_equal(out, x)


def test_unet_mixed_kinds_identity(rng):
    cfg = UNetConfig(width=4, stages={"Enc1": "2xAlt3", "Enc2": "1xAlt1", "Mid": "1xAlt2", "Dec1": "2xAlt3"})
    x = rng.standard_normal((2, 3, 32, 32))
    np.testing.assert_array_equal(build_unet(cfg)(Tensor(x)).data, x)


def test_unet_random_init_shape_and_width_doubling(rng):
    cfg = UNetConfig(width=4, enc_counts=(1, 1), mid_count=1, dec_counts=(1, 1))
    net = build_unet(cfg, identity_init=False)
    out = net(Tensor(rng.standard_normal((1, 3, 8, 8))))
    assert out.shape == (1, 3, 8, 8)
    assert [cfg.stage_width(s) for s in cfg.stage_ids] == [4, 8, 16, 8, 4]
    assert net.stage("Mid")[0].c == 16


def test_unet_rejects_bad_sizes():
    with pytest.raises(ValueError, match="divisible"):
        build_unet(UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,)))(Tensor(np.zeros((1, 3, 5, 6))))
    with pytest.raises(ValueError, match="even"):
        UNetConfig(width=5)
    with pytest.raises(ValueError, match="unknown stage"):
        UNetConfig(stages={"Enc9": "1xAlt0"})


def test_unet_gradients_reach_every_parameter(rng):
    cfg = UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,), stages={"Dec1": "1xAlt3"})
    net = build_unet(cfg, identity_init=False)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    ops.mse_loss(net(x), np.zeros((2, 3, 4, 4))).backward()
    for name, p in net.named_parameters():
        assert np.any(p.grad != 0), name


def test_derived_config_has_fewer_parameters(ref_alphas):
    base = reference_base_config(64)
    derived = base.with_stages({s: CandidateSpec.parse(v) for s, v in ref_alphas["derived"].items()})
    n_base = build_unet(base).num_parameters()
    n_derived = build_unet(derived).num_parameters()
    assert n_derived < n_base
    assert 0.07 <= 1 - n_derived / n_base <= 0.17


def test_config_dict_roundtrip():
    cfg = UNetConfig(width=16, stages={"Enc2": "2xAlt3"})
    assert UNetConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


# ----------------------------------------------------------------- container


def test_container_bit_exact_roundtrip(tmp_path, rng):
    net = build_unet(UNetConfig(width=4, stages={"Enc1": "1xAlt3"}), identity_init=False)
    state = net.state_dict()
    state["extra.f32"] = rng.standard_normal((3, 2)).astype(np.float32)
    state["extra.i64"] = np.arange(5)
    save_params(state, tmp_path / "params")
    back = load_params(tmp_path / "params.json")
    assert list(back) == list(state)
    for k in state:
        assert back[k].dtype == state[k].dtype and back[k].shape == state[k].shape
        assert back[k].tobytes() == state[k].tobytes()
    manifest = (tmp_path / "params.json").read_text()
    assert '"offset"' in manifest and '"dtype"' in manifest


def test_load_state_dict_strict(rng):
    net = make_candidate(CandidateSpec(BlockKind.ALT0, 1), 4, rng)
    state = net.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        net.load_state_dict(state)
