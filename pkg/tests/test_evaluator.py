import numpy as np
import pytest

from cimbnn.data_io import make_synthetic
from cimbnn.errors import ParameterError
from cimbnn.evaluator import McReport, baseline_accuracy, mc_inference
from cimbnn.nn.arch import tiny
from cimbnn.nn.layers import build_network
from cimbnn.variation import CellCharacterization, zero_variation

from conftest import harsh_characterization


def test_zero_variation_runs_equal_baseline(trained_tiny, synthetic_data):
    _, te = synthetic_data
    rep = mc_inference(trained_tiny, zero_variation(), te, n_runs=5, act_stddev=0.0)
    base = baseline_accuracy(trained_tiny, te)
    assert rep.accuracies == [base] * 5 and rep.std == 0.0 and rep.mean == base


def test_flipped_report(trained_tiny, synthetic_data):
    _, te = synthetic_data
    c = CellCharacterization(0.9, 0.1, 2.3, 0.1, 0.9, 0.1, flipped=True)
    rep = mc_inference(trained_tiny, c, te, n_runs=5)
    assert rep.flipped and rep.accuracies == [] and rep.status == "Flipped"
    assert McReport.from_json(rep.to_json()) == rep


def test_harsh_variation_lowers_accuracy(trained_tiny, synthetic_data):
    _, te = synthetic_data
    base = mc_inference(trained_tiny, zero_variation(), te, n_runs=20, act_stddev=0.0).mean
    harsh = mc_inference(trained_tiny, harsh_characterization(0.4), te, n_runs=20, seed=1)
    assert harsh.mean < base


def test_untrained_model_is_chance():
    ds = make_synthetic(10, 100, (3, 8, 8), seed=4, noise=0.4)
    accs = [baseline_accuracy(build_network(tiny(), 16, s), ds) for s in range(5)]
    assert abs(np.mean(accs) - 0.1) <= 0.03


def test_threads_do_not_change_report(trained_tiny, synthetic_data):
    _, te = synthetic_data
    c = harsh_characterization(0.3)
    a = mc_inference(trained_tiny, c, te, n_runs=6, seed=9, threads=1)
    b = mc_inference(trained_tiny, c, te, n_runs=6, seed=9, threads=3)
    assert a == b and a.to_json() == b.to_json()


def test_report_round_trip(tmp_path, trained_tiny, synthetic_data):
    _, te = synthetic_data
    rep = mc_inference(trained_tiny, harsh_characterization(0.3), te, n_runs=4, seed=2)
    rep.save(tmp_path / "r.json")
    back = McReport.load(tmp_path / "r.json")
    assert back == rep and back.mean == rep.mean and back.std == rep.std
    assert rep.std == pytest.approx(np.std(rep.accuracies))
    lines = rep.runs_csv().splitlines()
    assert lines[0] == "run,accuracy" and len(lines) == 5
    assert [float(l.split(",")[1]) for l in lines[1:]] == rep.accuracies


def test_empty_dataset(trained_tiny, synthetic_data):
    _, te = synthetic_data
    with pytest.raises(ParameterError):
        mc_inference(trained_tiny, zero_variation(), te.take([]), n_runs=2)
