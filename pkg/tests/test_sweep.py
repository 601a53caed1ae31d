import math

import pytest

from cimbnn.errors import NoViablePointError
from cimbnn.evaluator import baseline_accuracy
from cimbnn.nn.arch import tiny
from cimbnn.sweep import parse_grid_csv, reference_point, run_sweep, select_best
from cimbnn.tensor_core import RngStream
from cimbnn.trainer import TrainConfig, train
from cimbnn.variation import CellCharacterization, SyntheticKnobs, generate_synthetic_characterization, zero_variation


def cfg(**kw):
    base = dict(epochs=3, array_size=16, batch_size=64, seed=2)
    base.update(kw)
    return TrainConfig(**base)


def test_single_zero_variation_point(synthetic_data):
    tr, te = synthetic_data
    res = run_sweep([zero_variation()], tiny(), tr, te, cfg(act_stddev=0.0), "retrain-per-point", n_runs=3)
    plain = train(cfg(act_stddev=0.0), tiny(), tr).model
    assert len(res.rows) == 1
    assert res.rows[0].mean == baseline_accuracy(plain, te) == res.best_mean


def test_flipped_point_excluded(synthetic_data):
    tr, te = synthetic_data
    good = CellCharacterization(0.9, 0.4, math.log(10), 0.1, math.log(2.5), 0.15)
    bad = CellCharacterization(0.9, 0.1, math.log(10), 0.0, math.log(2.5), 0.0, flipped=True)
    res = run_sweep([bad, good], tiny(), tr, te, cfg(), "shared-model", n_runs=3)
    rows = parse_grid_csv(res.grid_csv())
    assert [r["flipped"] for r in rows] == [True, False]
    assert "Flipped" in res.grid_csv().splitlines()[1]
    assert res.best == (0.9, 0.4)
    with pytest.raises(NoViablePointError):
        run_sweep([bad], tiny(), tr, te, cfg(), "shared-model", n_runs=3)


def test_select_best_tie_break():
    from cimbnn.evaluator import McReport
    reps = [McReport(0.9, 0.4, [0.5]), McReport(0.5, 0.3, [0.5], 1), McReport(0.5, 0.2, [0.5], 1),
            McReport(0.3, 0.1, [], 0, True)]
    assert (select_best(reps).v_wl, select_best(reps).v_bl) == (0.5, 0.2)


def test_monotone_table_best_at_max_vwl(synthetic_data):
    tr, te = synthetic_data
    grid = [(v, 0.4) for v in (0.4, 0.6, 0.9)]
    table = generate_synthetic_characterization(grid, SyntheticKnobs(sigma_scale=5.0), RngStream(0))
    assert [c.sigma_log_ibl for c in table][0] > table[2].sigma_log_ibl
    res = run_sweep(table, tiny(), tr, te, cfg(), "shared-model", n_runs=20)
    assert res.best[0] == 0.9
    assert res.provenance["reference"] == [0.9, 0.4] == list(reference_point(list(table)).key)


def test_sweep_reproducible_and_thread_independent(synthetic_data):
    tr, te = synthetic_data
    grid = [(0.5, 0.2), (0.9, 0.4), (0.9, 0.2)]
    table = generate_synthetic_characterization(grid, SyntheticKnobs(sigma_scale=3.0, flip_ratio=4.4))
    a = run_sweep(table, tiny(), tr, te, cfg(epochs=1), "shared-model", n_runs=4, seed=3)
    b = run_sweep(table, tiny(), tr, te, cfg(epochs=1), "shared-model", n_runs=4, seed=3, threads=3)
    assert a.grid_csv() == b.grid_csv()
    assert a.provenance == b.provenance
    assert len(parse_grid_csv(a.grid_csv())) == 3
