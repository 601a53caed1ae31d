import math

import numpy as np
import pytest

from cimbnn.nn.arch import LayerSpec, resnet18, tiny, vgg9
from cimbnn.nn.layers import CimLayer, DigitalLayer, RunContext, build_network
from cimbnn.tensor_core import RngStream
from cimbnn.trainer import backward_layer, forward_layer_variation_aware
from cimbnn.variation import CellCharacterization, DeltaSampler, zero_variation


class PinnedSampler:
    """Returns fixed currents / threshold offsets so the forward pass can be traced by hand."""

    def __init__(self, i_bl, i_blb, im, act):
        self.i_bl, self.i_blb, self.im, self.act = i_bl, i_blb, im, act

    def sample_currents(self, rng, n):
        g = rng.path[-2]   # group index
        return self.i_bl[g][:n].copy(), self.i_blb[g][:n].copy()

    def sample_act(self, rng, n):
        return self.act[rng.path[-2]][:n].copy()


def fc_layer(k, c, array, seed=0):
    return CimLayer("cim", 0, LayerSpec("fc", k, c), array, RngStream(seed, 1))


def test_hand_trace_two_groups():
    layer = fc_layer(4, 2, 2)
    layer.weight[...] = [[0.3, -0.1], [-0.4, 0.2], [0.0, -0.7], [0.5, 0.6]]
    # 2 rows per group, 2 columns -> 4 cells per group
    i_bl = [np.array([10.5, 9.0, 11.0, 10.0]), np.array([8.0, 10.0, 12.0, 9.5])]
    i_blb = [np.array([2.0, 2.5, 1.5, 2.0]), np.array([2.0, 1.0, 2.0, 3.0])]
    act = [np.array([0.05, -0.1]), np.array([0.0, 0.2])]
    sampler = PinnedSampler(i_bl, i_blb, 8.0, act)
    x = np.array([[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]])
    ctx = RunContext(training=True, sampler=sampler, rng=RngStream(0, 3))
    out, _ = forward_layer_variation_aware(layer, x, ctx)

    # trace: sign -> polarize -> per-group sums -> BN (batch stats, gamma 1, beta 0) -> clip -> x >= 0.5 + d_act -> mean
    wb = [[1, -1], [-1, 1], [1, -1], [1, 1]]
    expected = np.zeros((3, 2))
    for g in range(2):
        rows = (2 * g, 2 * g + 1)
        wp = np.zeros((2, 2))
        cell = 0
        for r_i, r in enumerate(rows):
            for col in range(2):
                ib, ibb = i_bl[g][cell], i_blb[g][cell]
                wp[r_i, col] = 1 + ((ib - ibb) / 8 - 1) if wb[r][col] > 0 else -1 + ((ibb - ib) / 8 + 1)
                cell += 1
        s = np.array([[sum(x[m, r] * wp[j, col] for j, r in enumerate(rows)) for col in range(2)] for m in range(3)])
        for col in range(2):
            mu = s[:, col].mean()
            var = ((s[:, col] - mu) ** 2).mean()
            a = (s[:, col] - mu) / math.sqrt(var + 1e-5)
            a = np.clip(a, 0, 1)
            expected[:, col] += (a >= 0.5 + act[g][col]) / 2
    np.testing.assert_array_equal(out, expected)


def plain_bnn_backward(x, w, g_out, gamma):
    """Independent oracle: one-group binary fc + training BN + [0,1] STE, explicit BN Jacobian."""
    wb = np.where(w >= 0, 1.0, -1.0)
    s = x @ wb
    m = s.shape[0]
    mu, var = s.mean(0), s.var(0)
    std = np.sqrt(var + 1e-5)
    xhat = (s - mu) / std
    a = gamma * xhat
    g_a = g_out * ((a >= 0) & (a <= 1))
    g_s = np.zeros_like(s)
    for c in range(s.shape[1]):
        jac = gamma[c] / std[c] * (np.eye(m) - 1.0 / m - np.outer(xhat[:, c], xhat[:, c]) / m)
        g_s[:, c] = jac.T @ g_a[:, c]
    return g_s @ wb.T, x.T @ g_s, (g_a * xhat).sum(0), g_a.sum(0)


def test_single_group_backward_matches_plain_bnn(rng):
    layer = fc_layer(4, 2, 256, seed=5)
    layer.bn.gamma[...] = [[0.8, -1.3]]
    x = (rng.random((6, 4)) > 0.5).astype(float)
    x[0] = 1.0
    layer.forward(x, RunContext(training=True))
    g = rng.standard_normal((6, 2))
    gx, gw, (gg, gb) = backward_layer(layer, g)
    ox, ow, og, ob = plain_bnn_backward(x, layer.weight, g, layer.bn.gamma[0])
    np.testing.assert_allclose(gx, ox, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(gw, ow, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(gg[0], og, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(gb[0], ob, rtol=1e-10, atol=1e-12)


def test_zero_grad_gives_zero(rng):
    layer = fc_layer(8, 3, 4)
    x = (rng.random((5, 8)) > 0.5).astype(float)
    layer.forward(x, RunContext(training=True))
    gx, gw, (gg, gb) = backward_layer(layer, np.zeros((5, 3)))
    assert not gx.any() and not gw.any() and not gg.any() and not gb.any()


def test_grad_flows_only_inside_gate(rng):
    layer = fc_layer(8, 3, 256)
    x = (rng.random((16, 8)) > 0.5).astype(float)
    layer.forward(x, RunContext(training=True, ste_lo=0.0, ste_hi=0.5))
    a = layer.cache[4]
    layer.backward(np.ones((16, 3)))
    # BN-backward input is the gated gradient; recompute it and compare the gate pattern
    gate = (a >= 0) & (a <= 0.5)
    from cimbnn.binarize import ste_gate
    np.testing.assert_array_equal(ste_gate(np.ones_like(a), a, 0.0, 0.5) != 0, gate)


def test_zero_variation_equals_deterministic(rng):
    layer = fc_layer(32, 4, 8)
    x = (rng.random((10, 32)) > 0.5).astype(float)
    sampler = DeltaSampler(zero_variation(), 0.0)
    a = layer.forward(x, RunContext(training=True, sampler=sampler, rng=RngStream(1, 3)))
    b = layer.forward(x, RunContext(training=True))
    assert np.array_equal(a, b)


def test_single_group_equals_unsplit_under_same_draws(rng):
    c = CellCharacterization(0.9, 0.4, math.log(10), 0.3, math.log(2.5), 0.4)
    sampler = DeltaSampler(c, 0.05)
    x = (rng.random((12, 16)) > 0.5).astype(float)
    layer = fc_layer(16, 4, 16)
    out = layer.forward(x, RunContext(training=True, sampler=sampler, rng=RngStream(2, 3)))
    # unsplit oracle with the same substreams (layer 0, group 0)
    st = RngStream(2, 3)
    i_bl, i_blb = sampler.sample_currents(st.derive(0, 0, 0), 64)
    wb = np.where(layer.weight >= 0, 1.0, -1.0)
    dp = (i_bl - i_blb) / sampler.im - 1
    dm = (i_blb - i_bl) / sampler.im + 1
    wp = np.where(wb.ravel() > 0, 1 + dp, -1 + dm).reshape(wb.shape)
    s = x @ wp
    a = (s - s.mean(0)) / np.sqrt(s.var(0) + 1e-5)
    ref = (np.clip(a, 0, 1) >= 0.5 + sampler.sample_act(st.derive(0, 0, 1), 4)).astype(float)
    np.testing.assert_array_equal(out, ref)


def test_fresh_variation_per_minibatch(rng):
    c = CellCharacterization(0.9, 0.4, math.log(10), 0.3, math.log(2.5), 0.4)
    layer = fc_layer(16, 4, 8)
    x = (rng.random((12, 16)) > 0.5).astype(float)
    root = RngStream(0, 3)
    s1 = DeltaSampler(c, 0.05)
    layer.forward(x, RunContext(training=True, sampler=s1, rng=root.derive(0, 0)))
    pre1 = layer.cache[3].copy()
    layer.forward(x, RunContext(training=True, sampler=s1, rng=root.derive(0, 1)))
    assert not np.array_equal(pre1, layer.cache[3])
    z = DeltaSampler(zero_variation(), 0.0)
    layer.forward(x, RunContext(training=True, sampler=z, rng=root.derive(0, 0)))
    pre3 = layer.cache[3].copy()
    layer.forward(x, RunContext(training=True, sampler=z, rng=root.derive(0, 1)))
    assert np.array_equal(pre3, layer.cache[3])


def test_digital_layers_never_binarized(rng):
    for spec, shape in ((tiny(), (4, 3, 8, 8)), (resnet18(), (2, 3, 32, 32))):
        net = build_network(spec, 16 if spec.name == "tiny" else 256, 0)
        c = CellCharacterization(0.9, 0.4, math.log(10), 0.3, math.log(2.5), 0.4)
        ctx = RunContext(training=True, sampler=DeltaSampler(c, 0.05), rng=RngStream(0, 3))
        y = net.forward(rng.random(shape), ctx)
        net.backward(np.ones_like(y) / y.size)
        digital = [l.name for l in net.walk() if isinstance(l, DigitalLayer) or l.name.endswith("shortcut")]
        assert digital
        for name in digital:
            for op in ("sign", "polarize", "sto_quantize"):
                assert ctx.counters[f"{name}.{op}"] == 0
        for l in net.cim_layers():
            assert ctx.counters[f"{l.name}.polarize"] == 1


@pytest.mark.parametrize("spec,array", [(vgg9(), 256), (resnet18(), 256), (tiny(), 16)])
def test_network_shapes_and_grads(spec, array, rng):
    net = build_network(spec, array, 0)
    n = 2
    x = rng.random((n,) + tuple(spec.input_shape))
    y = net.forward(x, RunContext(training=True))
    assert y.shape == (n, spec.num_classes)
    gx = net.backward(np.ones_like(y))
    assert gx.shape == x.shape
    grads = net.named_grads()
    for name, p in net.named_params().items():
        assert grads[name].shape == p.shape


def test_resnet_uses_projection_where_shapes_change():
    net = build_network(resnet18(), 256, 0)
    proj = [l.name for l in net.walk() if l.name.endswith("shortcut") and l.projection]
    assert len(proj) == 4   # two widening blocks and two downsampling blocks
