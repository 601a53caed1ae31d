"""Layers with explicit forward/backward and the network container.

Binary activations travel between layers as float arrays of 0.0/1.0. A CIM
layer returns the *merged fraction* of set group bits; the following
:class:`MergeAct` (or the residual merge of a :class:`ResBlock`) thresholds it.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import kernels, mapping
from ..binarize import bin_act, clip01, polarize, sign, ste_gate, sto_quantize
from ..errors import ValidationError
from ..tensor_core import RngStream, im2col_batch, col2im_batch
from .arch import NetworkSpec, infer_shapes, shortcut_geometry
from .functional import (BnParams, batchnorm_backward, batchnorm_forward, conv_backward, conv_forward,
                         fc_backward, fc_forward, mc_to_nchw, nchw_to_mc)

STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_TRAIN = 3
STREAM_CHIP = 4


@dataclass
class RunContext:
    training: bool = False
    thresh: float = 0.5
    sampler: object = None
    rng: RngStream | None = None
    ste_lo: float = 0.0
    ste_hi: float = 1.0
    chip: object = None
    counters: Counter = field(default_factory=Counter)


class Layer:
    def __init__(self, name):
        self.name = name
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.lr_scales = {}
        self.clipped = set()
        self.cache = None

    def children(self):
        return []

    def forward(self, x, ctx: RunContext):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _register_bn(self, prefix, bn: BnParams):
        self.params[f"{prefix}gamma"] = bn.gamma
        self.params[f"{prefix}beta"] = bn.beta
        self.buffers[f"{prefix}running_mean"] = bn.running_mean
        self.buffers[f"{prefix}running_var"] = bn.running_var


def _he_normal(rng, fan_in, shape):
    std = np.sqrt(2.0 / fan_in)
    return std * rng.generator.standard_normal(shape), std


class DigitalLayer(Layer):
    """Full-precision conv/fc + batch norm, optionally followed by clip + BinAct.

    Runs outside the memory arrays, so no variation ever touches it.
    """

    def __init__(self, name, spec, rng, act=True):
        super().__init__(name)
        self.spec = spec
        self.act = act
        self.weight, _ = _he_normal(rng, spec.input_size, (spec.input_size, spec.out_channels))
        self.bn = BnParams.create(1, spec.out_channels)
        self.params["weight"] = self.weight
        self._register_bn("bn.", self.bn)

    def forward(self, x, ctx):
        s = self.spec
        if s.kind == "conv":
            y, lin_cache = conv_forward(x, self.weight, s.kernel, s.stride, s.pad)
            n, _, h, w = y.shape
            flat = nchw_to_mc(y)
        else:
            y, lin_cache = fc_forward(x, self.weight)
            flat = y
        a, bn_cache = batchnorm_forward(flat[None], self.bn, ctx.training)
        out = a[0]
        if self.act:
            out = bin_act(clip01(out), ctx.thresh)
        if s.kind == "conv":
            out = mc_to_nchw(out, n, h, w)
        self.cache = (lin_cache, bn_cache, a, y.shape, ctx.ste_lo, ctx.ste_hi)
        return out

    def backward(self, g):
        lin_cache, bn_cache, a, y_shape, lo, hi = self.cache
        s = self.spec
        g = nchw_to_mc(g) if s.kind == "conv" else g
        g = g[None]
        if self.act:
            g = ste_gate(g, a, lo, hi)
        g_s, gg, gb = batchnorm_backward(g, bn_cache)
        if s.kind == "conv":
            n, _, h, w = y_shape
            gx, gw = conv_backward(mc_to_nchw(g_s[0], n, h, w), lin_cache)
        else:
            gx, gw = fc_backward(g_s[0], lin_cache)
        self.grads = {"weight": gw, "bn.gamma": gg, "bn.beta": gb}
        return gx


class CimLayer(Layer):
    """Binary layer mapped onto memory arrays with input splitting.

    Forward (training or software inference): split rows into groups; per
    group sign -> (polarize) -> matmul; batch norm per (group, channel);
    clip; (stochastic) binary activation; average the group bits.
    With ``ctx.chip`` set, the group bits come from the programmed arrays.
    """

    def __init__(self, name, index, spec, array_size, rng):
        super().__init__(name)
        self.index = index
        self.spec = spec
        self.n_groups = mapping.compute_n_groups(spec.input_size, array_size)
        self.slices = mapping.group_slices(spec.input_size, self.n_groups)
        self.weight, std = _he_normal(rng, spec.input_size, (spec.input_size, spec.out_channels))
        self.init_std = std
        self.bn = BnParams.create(self.n_groups, spec.out_channels)
        self.params["weight"] = self.weight
        self.lr_scales["weight"] = std
        self.clipped.add("weight")
        self._register_bn("bn.", self.bn)

    def columns(self, x):
        s = self.spec
        if s.kind == "conv":
            cols = im2col_batch(x, s.kernel, s.stride, s.pad)
            n, L, K = cols.shape
            oh = (x.shape[2] + 2 * s.pad - s.kernel) // s.stride + 1
            return cols.reshape(n * L, K), (n, oh, L // oh)
        return np.asarray(x, dtype=np.float64), None

    def binary_weights(self, ctx):
        wb = sign(self.weight)
        ctx.counters[f"{self.name}.sign"] += 1
        if ctx.sampler is None:
            return wb
        wp = np.empty_like(wb)
        for g, sl in enumerate(self.slices):
            wp[sl] = polarize(wb[sl], ctx.sampler, ctx.rng.derive(self.index, g, 0))
        ctx.counters[f"{self.name}.polarize"] += 1
        return wp

    def forward(self, x, ctx):
        cols, geom = self.columns(x)
        if ctx.chip is not None and not ctx.training:
            bits = ctx.chip.group_bits(self.name, cols)
            self.cache = None
        else:
            wp = self.binary_weights(ctx)
            s = np.stack([cols[:, sl] @ wp[sl] for sl in self.slices])
            a, bn_cache = batchnorm_forward(s, self.bn, ctx.training)
            if ctx.sampler is not None:
                delta = np.stack([ctx.sampler.sample_act(ctx.rng.derive(self.index, g, 1), self.spec.out_channels)
                                  for g in range(self.n_groups)])[:, None, :]
            else:
                delta = 0.0
            bits = sto_quantize(clip01(a), ctx.thresh, delta)
            ctx.counters[f"{self.name}.sto_quantize"] += 1
            self.cache = (cols, geom, wp, s, a, bn_cache, ctx.ste_lo, ctx.ste_hi, np.shape(x))
        m = mapping.merge_mean(bits)
        if geom is not None:
            n, oh, ow = geom
            return mc_to_nchw(m, n, oh, ow)
        return m

    def backward(self, g):
        cols, geom, wp, s, a, bn_cache, lo, hi, x_shape = self.cache
        g_m = nchw_to_mc(g) if geom is not None else g
        # merge backward: straight-through on the group average
        g_bits = np.broadcast_to(g_m / self.n_groups, a.shape)
        g_a = ste_gate(g_bits, a, lo, hi)
        g_s, gg, gb = batchnorm_backward(g_a, bn_cache)
        g_cols = np.empty_like(cols)
        gw = np.empty_like(self.weight)
        for gi, sl in enumerate(self.slices):
            g_cols[:, sl] = g_s[gi] @ wp[sl].T
            gw[sl] = cols[:, sl].T @ g_s[gi]
        self.grads = {"weight": gw, "bn.gamma": gg, "bn.beta": gb}
        if geom is None:
            return g_cols
        n, oh, ow = geom
        s_ = self.spec
        return col2im_batch(g_cols.reshape(n, oh * ow, -1), x_shape, s_.kernel, s_.stride, s_.pad)


class MergeAct(Layer):
    """Final BinAct on a merged value; straight-through gradient inside [0, 1]."""

    def forward(self, z, ctx):
        self.cache = z
        return bin_act(z, ctx.thresh)

    def backward(self, g):
        return ste_gate(g, self.cache, 0.0, 1.0)


class MaxPool(Layer):
    def __init__(self, name, size):
        super().__init__(name)
        self.size = size

    def forward(self, x, ctx):
        out, arg = kernels.maxpool(x, self.size)
        self.cache = (arg, x.shape)
        return out

    def backward(self, g):
        arg, x_shape = self.cache
        return kernels.maxpool_backward(g, arg, self.size, x_shape)


class Flatten(Layer):
    def forward(self, x, ctx):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self.cache)


class GlobalAvgPool(Layer):
    def forward(self, x, ctx):
        self.cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        n, c, h, w = self.cache
        return np.broadcast_to(g[:, :, None, None] / (h * w), self.cache).copy()


class Shortcut(Layer):
    """Full-precision shortcut: batch norm, preceded by a 1x1 conv when shapes change."""

    def __init__(self, name, in_ch, out_ch, stride, rng):
        super().__init__(name)
        self.stride = stride
        self.projection = in_ch != out_ch or stride != 1
        if self.projection:
            self.weight, _ = _he_normal(rng, in_ch, (in_ch, out_ch))
            self.params["weight"] = self.weight
        self.bn = BnParams.create(1, out_ch)
        self._register_bn("bn.", self.bn)

    def forward(self, x, ctx):
        if self.projection:
            y, conv_cache = conv_forward(x, self.weight, 1, self.stride, 0)
        else:
            y, conv_cache = x, None
        n, _, h, w = y.shape
        a, bn_cache = batchnorm_forward(nchw_to_mc(y)[None], self.bn, ctx.training)
        self.cache = (conv_cache, bn_cache, (n, h, w))
        return mc_to_nchw(a[0], n, h, w)

    def backward(self, g):
        conv_cache, bn_cache, (n, h, w) = self.cache
        g_s, gg, gb = batchnorm_backward(nchw_to_mc(g)[None], bn_cache)
        g_y = mc_to_nchw(g_s[0], n, h, w)
        self.grads = {"bn.gamma": gg, "bn.beta": gb}
        if not self.projection:
            return g_y
        gx, gw = conv_backward(g_y, conv_cache)
        self.grads["weight"] = gw
        return gx


class ResBlock(Layer):
    """Two CIM convolutions; the full-precision shortcut joins in the digital merge."""

    def __init__(self, name, cim_a, act_a, cim_b, shortcut, act_out):
        super().__init__(name)
        self.cim_a, self.act_a, self.cim_b = cim_a, act_a, cim_b
        self.shortcut, self.act_out = shortcut, act_out

    def children(self):
        return [self.cim_a, self.act_a, self.cim_b, self.shortcut, self.act_out]

    def forward(self, x, ctx):
        h = self.act_a.forward(self.cim_a.forward(x, ctx), ctx)
        z = self.cim_b.forward(h, ctx) + self.shortcut.forward(x, ctx)
        return self.act_out.forward(z, ctx)

    def backward(self, g):
        gz = self.act_out.backward(g)
        gx_short = self.shortcut.backward(gz)
        gh = self.act_a.backward(self.cim_b.backward(gz))
        return self.cim_a.backward(gh) + gx_short


class Network:
    def __init__(self, spec: NetworkSpec, layers, array_size, seed):
        self.spec = spec
        self.layers = layers
        self.array_size = array_size
        self.seed = seed

    def forward(self, x, ctx: RunContext):
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def walk(self):
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.children()))

    def cim_layers(self):
        return [l for l in self.walk() if isinstance(l, CimLayer)]

    def named_params(self):
        return {f"{l.name}.{k}": v for l in self.walk() for k, v in l.params.items()}

    def named_buffers(self):
        return {f"{l.name}.{k}": v for l in self.walk() for k, v in l.buffers.items()}

    def named_grads(self):
        return {f"{l.name}.{k}": v for l in self.walk() for k, v in l.grads.items()}

    def lr_scales(self):
        return {f"{l.name}.{k}": v for l in self.walk() for k, v in l.lr_scales.items()}

    def clipped_params(self):
        return {f"{l.name}.{k}" for l in self.walk() for k in l.clipped}

    def predict(self, images, ctx: RunContext | None = None, batch_size=500):
        ctx = ctx or RunContext()
        out = []
        for i in range(0, len(images), batch_size):
            out.append(self.forward(images[i:i + batch_size], ctx).argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def build_network(spec: NetworkSpec, array_size=mapping.DEFAULT_ARRAY_SIZE, seed=0) -> Network:
    spec.validate()
    infer_shapes(spec)  # raises on inconsistent geometry
    weighted = spec.weighted_indices()
    init = RngStream(seed, STREAM_INIT)
    layers = []
    for i, l in enumerate(spec.layers):
        name = f"layer{i}"
        rng = init.derive(i)
        if l.weighted and l.split == "digital":
            layers.append(DigitalLayer(name, l, rng, act=(i != weighted[-1])))
        elif l.weighted:
            layers.append(CimLayer(name, i, l, array_size, rng))
            layers.append(MergeAct(f"{name}.merge"))
        elif l.kind == "pool":
            layers.append(MaxPool(name, l.kernel))
        elif l.kind == "flatten":
            layers.append(Flatten(name))
        elif l.kind == "avgpool":
            layers.append(GlobalAvgPool(name))
        elif l.kind == "shortcut-add":
            if l.span != 2 or len(layers) < 4 or not (isinstance(layers[-4], CimLayer) and isinstance(layers[-2], CimLayer)):
                raise ValidationError(f"layer {i}: residual blocks must close two CIM convolutions")
            cim_a, act_a, cim_b, act_b = layers[-4:]
            del layers[-4:]
            cin, cout, stride = shortcut_geometry(spec, i)
            sc = Shortcut(f"{name}.shortcut", cin, cout, stride, rng)
            layers.append(ResBlock(name, cim_a, act_a, cim_b, sc, act_b))
        else:  # pragma: no cover - validate() rejects unknown kinds
            raise ValidationError(f"unsupported layer kind {l.kind}")
    return Network(spec, layers, array_size, seed)
