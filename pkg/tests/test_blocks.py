import numpy as np
import pytest

from oracles import numeric_grad, rel_error
from shareconv import ops
from shareconv.blocks import BlockConfig, BlockKind, ResidualBlock, layer_sequence
from shareconv.layers import Conv
from shareconv.ops import ConvGeometry
from shareconv.params import CONV_INIT, ParameterRegistry


def _block(kind, cin, cout, mid=None, stride=1, shared=None, reg=None, name="b"):
    if reg is None:
        reg = ParameterRegistry(seed=0, precision="f64")
    cfg = BlockConfig(kind, cin, cout, mid, stride, shared_binding=shared)
    return reg, ResidualBlock(reg, name, cfg)


def _randomize(reg, seed):
    # non-trivial batchnorm affine parameters so every path carries signal
    rng = np.random.default_rng(seed)
    for slot in reg:
        if slot.name.endswith(".scale"):
            slot.value = rng.uniform(0.5, 1.5, slot.shape)
        elif slot.name.endswith(".shift"):
            slot.value = rng.normal(0, 0.2, slot.shape)


def test_layer_sequences():
    def names(kind, rate=0.0):
        return [str(d) for d in layer_sequence(kind, rate)]

    assert names("bottleneck_post") == [
        "conv1x1", "bn", "relu", "conv3x3(stride)", "bn", "relu", "conv1x1", "bn",
        "add", "relu"]
    assert names("basic_post") == [
        "conv3x3(stride)", "bn", "relu", "conv3x3", "bn", "add", "relu"]
    assert names("basic_pre_wide") == [
        "bn", "relu", "conv3x3(stride)", "bn", "relu", "conv3x3", "add"]
    assert names("basic_pre_wide", 0.3) == [
        "bn", "relu", "conv3x3(stride)", "dropout", "bn", "relu", "conv3x3", "add"]
    assert names("bottleneck_pre") == [
        "bn", "relu", "conv1x1", "bn", "relu", "conv3x3(stride)", "bn", "relu", "conv1x1",
        "add"]
    for kind in BlockKind:
        threes = [d for d in layer_sequence(kind) if d.op == "conv" and d.kernel == 3]
        assert sum(d.designated for d in layer_sequence(kind)) == 1
        if kind.bottleneck:
            assert len(threes) == 1 and threes[0].designated
        else:
            assert [d.designated for d in threes] == [False, True]


@pytest.mark.parametrize("kind", ["bottleneck_pre", "basic_pre_wide"])
def test_zero_residual_is_identity_pre(kind):
    reg, blk = _block(kind, 8, 8, 2 if "bottleneck" in kind else None)
    for conv in blk.convs:
        reg[conv.param_id].value = np.zeros(reg[conv.param_id].shape)
    x = np.random.default_rng(0).standard_normal((2, 8, 6, 6))
    np.testing.assert_array_equal(blk.forward(x), x)


@pytest.mark.parametrize("kind", ["bottleneck_post", "basic_post"])
def test_zero_residual_is_identity_post(kind):
    reg, blk = _block(kind, 8, 8, 2 if "bottleneck" in kind else None)
    for conv in blk.convs:
        reg[conv.param_id].value = np.zeros(reg[conv.param_id].shape)
    # a zero kernel feeding batchnorm gives shift (0): branch is exactly 0;
    # the post-add ReLU is the identity on non-negative input
    x = np.abs(np.random.default_rng(0).standard_normal((2, 8, 6, 6)))
    np.testing.assert_array_equal(blk.forward(x), x)


@pytest.mark.parametrize("kind,mid", [("bottleneck_post", 4), ("basic_post", None),
                                      ("basic_pre_wide", None), ("bottleneck_pre", 4)])
def test_downsampling_shapes(kind, mid):
    _, blk = _block(kind, 8, 16, mid, stride=2)
    out = blk.forward(np.random.default_rng(0).standard_normal((2, 8, 8, 6)))
    assert out.shape == (2, 16, 4, 3)
    assert [c.instance_id for c in blk.shortcut if isinstance(c, Conv)] == ["b.proj"]


def test_channel_mismatch():
    _, blk = _block("basic_post", 4, 4)
    with pytest.raises(ValueError, match="4 input channels"):
        blk.forward(np.zeros((1, 3, 4, 4)))


def test_shared_binding_is_value_transparent():
    rng = np.random.default_rng(1)
    kernel = rng.standard_normal((4, 4, 3, 3)) * 0.2
    reg_s = ParameterRegistry(seed=5, precision="f64")
    sid = reg_s.register("shared", (4, 4, 3, 3), CONV_INIT)
    reg_s[sid].value = kernel
    _, shared = _block("basic_post", 4, 4, shared=sid, reg=reg_s)
    reg_p, private = _block("basic_post", 4, 4)
    for slot in reg_p:
        slot.value = kernel if slot.name == "b.conv2" else reg_s[slot.name].value
    assert shared.designated.param_id == sid
    x = rng.standard_normal((2, 4, 5, 5))
    assert rel_error(shared.forward(x), private.forward(x)) <= 1e-7


def test_bottleneck_post_matches_composition():
    reg, blk = _block("bottleneck_post", 256, 256, 64)
    _randomize(reg, 3)
    x = np.random.default_rng(2).standard_normal((2, 256, 8, 8))
    v = {s.name: s.value for s in reg}

    def bn(t, n):
        mu = t.mean(axis=(0, 2, 3), keepdims=True)
        var = t.var(axis=(0, 2, 3), keepdims=True)
        return (v[f"b.{n}.scale"][None, :, None, None] * (t - mu) / np.sqrt(var + 1e-5)
                + v[f"b.{n}.shift"][None, :, None, None])

    def conv1x1(t, w):
        return np.einsum("nchw,oc->nohw", t, w[:, :, 0, 0])

    h = np.maximum(bn(conv1x1(x, v["b.conv1"]), "bn1"), 0)
    h = np.maximum(bn(ops.conv2d_forward(h, v["b.conv2"], ConvGeometry(3, 3, 1, 1)), "bn2"), 0)
    h = bn(conv1x1(h, v["b.conv3"]), "bn3")
    expect = np.maximum(h + x, 0)
    assert rel_error(blk.forward(x), expect) <= 1e-6


def test_zero_upstream_gradient():
    reg, blk = _block("bottleneck_pre", 4, 8, 2, stride=2)
    x = np.random.default_rng(0).standard_normal((2, 4, 4, 4))
    out = blk.forward(x)
    gx = blk.backward(np.zeros_like(out))
    assert not gx.any()
    assert all(not s.grad.any() for s in reg)


@pytest.mark.parametrize("kind,mid,stride", [("basic_post", None, 1),
                                             ("basic_pre_wide", None, 2),
                                             ("bottleneck_post", 2, 2),
                                             ("bottleneck_pre", 2, 1)])
@pytest.mark.parametrize("seed", range(3))
def test_block_backward_finite_differences(kind, mid, stride, seed):
    reg, blk = _block(kind, 4, 4, mid, stride)
    _randomize(reg, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 4, 4))
    proj = rng.standard_normal(blk.forward(x).shape)
    reg.zero_grads()
    gx = blk.backward(proj)

    def loss():
        return float((blk.forward(x) * proj).sum())

    eps = 1e-6  # small enough that no ReLU input crosses zero
    assert rel_error(gx, numeric_grad(loss, x, eps)) <= 1e-5
    for slot in reg:
        assert rel_error(slot.grad, numeric_grad(loss, slot.value, eps)) <= 1e-5, slot.name


def test_two_block_shared_gradient_is_sum_of_tied_copies():
    rng = np.random.default_rng(4)
    kernel = rng.standard_normal((4, 4, 3, 3)) * 0.3
    reg_s = ParameterRegistry(seed=0, precision="f64")
    sid = reg_s.register("shared", kernel.shape, CONV_INIT)
    reg_s[sid].value = kernel
    shared = [_block("basic_pre_wide", 4, 4, shared=sid, reg=reg_s, name=f"b{i}")[1]
              for i in range(2)]
    reg_t = ParameterRegistry(seed=0, precision="f64")
    tied = [_block("basic_pre_wide", 4, 4, reg=reg_t, name=f"b{i}")[1] for i in range(2)]
    for slot in reg_t:
        slot.value = kernel if slot.name.endswith("conv2") else reg_s[slot.name].value
    x = rng.standard_normal((2, 4, 5, 5))
    g = rng.standard_normal(x.shape)
    for blocks in (shared, tied):
        h = x
        for b in blocks:
            h = b.forward(h)
        gb = g
        for b in reversed(blocks):
            gb = b.backward(gb)
    summed = reg_t["b0.conv2"].grad + reg_t["b1.conv2"].grad
    assert rel_error(reg_s[sid].grad, summed) <= 1e-6
    assert reg_s.binding_count(sid) == 2
