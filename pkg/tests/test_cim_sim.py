import math
from dataclasses import replace

import numpy as np
import pytest

from cimbnn.cim_sim import SramArrayInstance, array_forward, chip_accuracy, chip_forward, program_chip
from cimbnn.binarize import bin_act
from cimbnn.errors import DimensionError
from cimbnn.mapping import plan_network
from cimbnn.nn.functional import BnParams, batchnorm_forward, fold_bn_threshold
from cimbnn.nn.layers import RunContext
from cimbnn.tensor_core import RngStream
from cimbnn.variation import DeltaSampler, zero_variation

from conftest import harsh_characterization


def arr(w, x_th=0.0, d_act=0.0, direction=1.0):
    w = np.asarray(w, dtype=float)
    c = w.shape[1]
    return SramArrayInstance(w, np.full(c, x_th), np.full(c, d_act), np.full(c, direction))


def test_cell_truth_table():
    assert array_forward(arr([[1.0]], x_th=1.0), [1.0])[0] == 1       # +1 contributes +1
    assert array_forward(arr([[1.0]], x_th=1.0 + 1e-9), [1.0])[0] == 0
    assert array_forward(arr([[-1.0]], x_th=-1.0, direction=-1), [1.0])[0] == 1   # -1 contributes -1
    assert array_forward(arr([[-1.0]], x_th=-1.0 + 1e-9), [1.0])[0] == 0
    assert array_forward(arr([[1.0], [-1.0]], x_th=0.0), [0.0, 0.0])[0] == 1     # off rows add 0


def test_perturbed_sum_example():
    w = np.array([[1 + 0.1], [-1 - 0.05], [1 + 0.0]])
    a = arr(w, x_th=0.15 - 1e-12)
    assert (np.array([1.0, 1.0, 0.0]) @ w)[0] == pytest.approx(0.05)
    # y = 1.1 - 1.05 = 0.05; with X_th = 0 the bit is set
    assert array_forward(arr(w, 0.0), [1.0, 1.0, 0.0])[0] == 1
    assert array_forward(a, [1.0, 1.0, 0.0])[0] == 0


def test_length_mismatch():
    with pytest.raises(DimensionError):
        array_forward(arr(np.ones((3, 2))), np.ones(4))


def test_matches_bn_binact_oracle(rng):
    rows, cols, n = 64, 16, 10_000 // 16
    w = np.where(rng.random((rows, cols)) > 0.5, 1.0, -1.0)
    p = BnParams.create(1, cols)
    p.gamma[...] = rng.uniform(0.2, 2, (1, cols)) * rng.choice([-1, 1], (1, cols))
    p.beta[...] = rng.standard_normal((1, cols))
    p.running_mean[...] = rng.uniform(-8, 8, (1, cols))
    p.running_var[...] = rng.uniform(1, 30, (1, cols))
    x = (rng.random((n, rows)) > 0.5).astype(float)
    ref = bin_act(batchnorm_forward((x @ w)[None], p, False)[0][0], 0.5)
    x_th, d = fold_bn_threshold(p, 0.5)
    got = array_forward(SramArrayInstance(w, x_th[0], np.zeros(cols), d[0]), x)
    assert got.shape == (n, cols) and int(np.sum(got != ref)) == 0


def test_zero_variation_programming(trained_tiny):
    chip = program_chip(trained_tiny, DeltaSampler(zero_variation(), 0.0), RngStream(0, 4))
    plan = {r.layer: r for r in plan_network(trained_tiny.spec, 16).cim_rows()}
    numbers = {i: n for n, i in enumerate(trained_tiny.spec.weighted_indices(), start=1)}
    for layer in trained_tiny.cim_layers():
        row = plan[numbers[layer.index]]
        for g in range(layer.n_groups):
            a = chip.arrays[(layer.name, g)]
            assert set(np.unique(a.weights)) <= {-1.0, 1.0}
            assert not a.delta_act.any()
            assert a.weights.shape == (row.rows_per_group, layer.spec.out_channels)
            assert a.rows <= 16


def test_zero_variation_chip_equals_software(trained_tiny, synthetic_data):
    _, te = synthetic_data
    x = te.images[:256]
    chip = program_chip(trained_tiny, DeltaSampler(zero_variation(), 0.0), RngStream(0, 4))
    assert np.array_equal(chip_forward(chip, x), trained_tiny.forward(x, RunContext()))
    ideal = program_chip(trained_tiny, None, RngStream(0, 4))
    assert np.array_equal(chip_forward(ideal, x), trained_tiny.forward(x, RunContext()))


def test_chip_determinism(trained_tiny, synthetic_data):
    _, te = synthetic_data
    s = DeltaSampler(harsh_characterization(0.3), 0.05)
    a = program_chip(trained_tiny, s, RngStream(0, 4).derive(1))
    b = program_chip(trained_tiny, s, RngStream(0, 4).derive(1))
    c = program_chip(trained_tiny, s, RngStream(0, 4).derive(2))
    key = next(iter(a.arrays))
    assert np.array_equal(a.arrays[key].weights, b.arrays[key].weights)
    assert not np.array_equal(a.arrays[key].weights, c.arrays[key].weights)
    x = te.images[:64]
    assert np.array_equal(chip_forward(a, x), chip_forward(a, x))


def test_extreme_variation_is_chance(trained_tiny, synthetic_data):
    _, te = synthetic_data
    s = DeltaSampler(harsh_characterization(3.0), 0.05)
    accs = [chip_accuracy(program_chip(trained_tiny, s, RngStream(0, 4).derive(r)), te.images, te.labels)
            for r in range(10)]
    assert abs(np.mean(accs) - 0.1) <= 0.03


def test_im_scale_invariance(trained_tiny, synthetic_data):
    _, te = synthetic_data
    base = harsh_characterization(0.3)
    c = 3.7
    scaled = replace(base, mu_log_ibl=base.mu_log_ibl + math.log(c), mu_log_iblb=base.mu_log_iblb + math.log(c))
    assert scaled.current_margin == pytest.approx(c * base.current_margin)
    a = program_chip(trained_tiny, DeltaSampler(base, 0.05), RngStream(0, 4).derive(3))
    b = program_chip(trained_tiny, DeltaSampler(scaled, 0.05), RngStream(0, 4).derive(3))
    assert np.array_equal(chip_forward(a, te.images), chip_forward(b, te.images))
