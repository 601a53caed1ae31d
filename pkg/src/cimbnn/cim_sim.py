"""Hardware view of a trained network: programmed arrays and sampled chips.

Everything is computed in normalized weight units (currents divided by IM).
A column's analog sum is ``y = sum_i (W_i + d_i) * WL_i`` and its sense
amplifier outputs ``y >= X_th + d_act`` (``<=`` for columns whose batch-norm
scale is negative). Since the physical comparison is ``I_BL - I_BLB >= X_th * IM``,
dividing both sides by IM gives exactly this rule.

A :class:`ChipInstance` is one manufactured die: every cell perturbation and
every sense-amplifier offset is drawn once at programming time and stays fixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarize import polarize, sign
from .errors import DimensionError
from .nn.functional import fold_bn_threshold
from .nn.layers import Network, RunContext
from .tensor_core import RngStream
from .variation import DeltaSampler


@dataclass(frozen=True)
class SramArrayInstance:
    weights: np.ndarray      # (rows, cols) analog weights W + d
    x_th: np.ndarray         # (cols,) folded thresholds
    delta_act: np.ndarray    # (cols,) sense-amplifier offsets, weight units
    direction: np.ndarray    # (cols,) +1 for ">=", -1 for "<="
    im: float = 1.0

    @property
    def rows(self):
        return self.weights.shape[0]


def array_forward(arr: SramArrayInstance, inputs):
    """Bits on the wordlines -> one output bit per column (vectorized over leading axes)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[-1] != arr.rows:
        raise DimensionError(f"{inputs.shape[-1]} wordline inputs for an array with {arr.rows} rows")
    y = inputs @ arr.weights
    thr = arr.x_th + arr.delta_act
    return np.where(arr.direction > 0, y >= thr, y <= thr).astype(np.float64)


@dataclass
class ChipInstance:
    model: Network
    arrays: dict
    slices: dict
    thresh: float = 0.5
    characterization: object = None
    stream: RngStream | None = None
    act_stddev: float = 0.0

    def group_bits(self, layer_name, cols):
        return np.stack([array_forward(self.arrays[(layer_name, g)], cols[:, sl])
                         for g, sl in enumerate(self.slices[layer_name])])

    def array_shapes(self):
        return {k: a.weights.shape for k, a in self.arrays.items()}


def program_chip(model: Network, sampler: DeltaSampler | None, rng: RngStream,
                 thresh: float = 0.5) -> ChipInstance:
    """Write sign(latent weights) and folded thresholds into arrays, drawing all variation once.

    ``sampler=None`` programs an ideal chip. Offsets are drawn as activation-level
    noise N(0, act_stddev) and mapped to weight units through the column's
    batch-norm scale, so a chip sees the same threshold noise law as training.
    """
    arrays, slices = {}, {}
    for layer in model.cim_layers():
        wb = sign(layer.weight)
        x_th, direction = fold_bn_threshold(layer.bn, thresh)
        std = np.sqrt(layer.bn.running_var + layer.bn.eps)
        slices[layer.name] = layer.slices
        for g, sl in enumerate(layer.slices):
            if layer.slices[g].stop - layer.slices[g].start > model.array_size:
                raise DimensionError(f"{layer.name} group {g} exceeds the array size {model.array_size}")
            w = wb[sl]
            cols = w.shape[1]
            if sampler is not None:
                w = polarize(w, sampler, rng.derive(layer.index, g, 0))
                offset = sampler.sample_act(rng.derive(layer.index, g, 1), cols) * std[g] / layer.bn.gamma[g]
            else:
                offset = np.zeros(cols)
            arrays[(layer.name, g)] = SramArrayInstance(
                weights=np.ascontiguousarray(w), x_th=x_th[g].copy(), delta_act=offset,
                direction=direction[g].copy(), im=sampler.im if sampler is not None else 1.0)
    return ChipInstance(model, arrays, slices, thresh,
                        sampler.charac if sampler is not None else None, rng,
                        sampler.act_stddev if sampler is not None else 0.0)


def chip_forward(chip: ChipInstance, images, batch_size=500):
    """Class scores for a batch of images run through the chip."""
    ctx = RunContext(training=False, thresh=chip.thresh, chip=chip)
    out = [chip.model.forward(images[i:i + batch_size], ctx) for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def chip_accuracy(chip: ChipInstance, images, labels, batch_size=500):
    if len(labels) == 0:
        return float("nan")
    pred = chip_forward(chip, images, batch_size).argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())
