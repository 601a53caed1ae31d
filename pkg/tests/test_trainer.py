import math
import struct

import numpy as np
import pytest

from cimbnn.data_io import make_synthetic, synthetic_split
from cimbnn.errors import FlippedCharacterizationError, FormatError, ValidationError
from cimbnn.nn.arch import tiny
from cimbnn.nn.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from cimbnn.nn.layers import build_network
from cimbnn.trainer import TrainConfig, read_metrics, train
from cimbnn.variation import CellCharacterization, zero_variation


@pytest.fixture(scope="module")
def small():
    return synthetic_split(256, 64, shape=(3, 8, 8), seed=1, noise=0.2)


def cfg(**kw):
    base = dict(epochs=2, array_size=16, batch_size=32, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_loss_decreases(small):
    tr, _ = small
    r = train(cfg(epochs=3), tiny(), tr)
    assert r.history[-1]["train_loss"] < r.history[0]["train_loss"]


def test_full_precision_loss_decreases_over_20_steps():
    from cimbnn.nn.arch import LayerSpec
    from cimbnn.nn.functional import softmax_cross_entropy
    from cimbnn.nn.layers import DigitalLayer, RunContext
    from cimbnn.nn.optim import Adam
    from cimbnn.tensor_core import RngStream
    layer = DigitalLayer("fc", LayerSpec("fc", 48, 3, precision="full", split="digital"), RngStream(0, 1), act=False)
    ds = make_synthetic(3, 8, (3, 4, 4), seed=2)
    x = ds.images.reshape(len(ds), -1)
    opt = Adam(layer.params)
    losses = []
    for _ in range(20):
        loss, g = softmax_cross_entropy(layer.forward(x, RunContext(training=True)), ds.labels)
        layer.backward(g)
        opt.step(layer.grads, 0.01)
        losses.append(loss)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_variation_trajectory_equals_plain(small):
    tr, _ = small
    plain = train(cfg(), tiny(), tr)
    aware = train(cfg(variation=zero_variation(), act_stddev=0.0), tiny(), tr)
    assert plain.history == aware.history
    for k, v in plain.model.named_params().items():
        assert np.array_equal(v, aware.model.named_params()[k])


def test_same_seed_identical_checkpoints(small, tmp_path):
    tr, _ = small
    c = CellCharacterization(0.9, 0.4, math.log(10), 0.2, math.log(2.5), 0.3)
    train(cfg(variation=c), tiny(), tr, out_dir=tmp_path / "a")
    train(cfg(variation=c), tiny(), tr, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_resume_is_bit_identical(small, tmp_path):
    tr, _ = small
    c = CellCharacterization(0.9, 0.4, math.log(10), 0.2, math.log(2.5), 0.3)
    full = train(cfg(epochs=3, variation=c), tiny(), tr, out_dir=tmp_path / "full")
    train(cfg(epochs=2, variation=c), tiny(), tr, out_dir=tmp_path / "part")
    resumed = train(cfg(epochs=3, variation=c), tiny(), tr, out_dir=tmp_path / "part",
                    resume=tmp_path / "part" / "checkpoint")
    assert resumed.history == full.history
    for k, v in full.model.named_params().items():
        assert np.array_equal(v, resumed.model.named_params()[k])
    assert (tmp_path / "full" / "metrics.csv").read_text() == (tmp_path / "part" / "metrics.csv").read_text()
    assert len(read_metrics(tmp_path / "full" / "metrics.csv")) == 3


def test_checkpoint_layout_and_round_trip(tmp_path):
    net = build_network(tiny(), 16, 4)
    save_checkpoint(tmp_path / "ck", net, epoch=7)
    m = read_manifest(tmp_path / "ck")
    assert m["byte_order"] == "little" and m["dtype"] == "float32" and m["epoch"] == 7
    entry = next(e for e in m["tensors"] if e["name"] == "layer1.weight")
    raw = (tmp_path / "ck" / entry["file"]).read_bytes()
    assert len(raw) == 4 * np.prod(entry["shape"])
    first = struct.unpack("<f", raw[:4])[0]
    assert first == np.float32(net.named_params()["layer1.weight"].flat[0])
    loaded, _, _ = load_checkpoint(tmp_path / "ck")
    for k, v in net.named_params().items():
        np.testing.assert_array_equal(loaded.named_params()[k], v.astype(np.float32).astype(np.float64))
    (tmp_path / "ck" / entry["file"]).write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")


def test_dataset_arch_mismatch(small):
    tr, _ = small
    with pytest.raises(ValidationError):
        train(cfg(), tiny(input_hw=16), tr)
    with pytest.raises(ValidationError):
        train(cfg(), tiny(num_classes=5), tr)


def test_flipped_refused(small):
    tr, _ = small
    c = CellCharacterization(0.9, 0.1, math.log(10), 0.2, math.log(2.5), 0.3, flipped=True)
    with pytest.raises(FlippedCharacterizationError):
        train(cfg(variation=c), tiny(), tr)


def test_config_round_trip():
    c = cfg(variation=zero_variation())
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert TrainConfig().act_stddev == pytest.approx(0.05)
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"epochs": 1, "colour": 2})
    with pytest.raises(ValueError):
        TrainConfig(thresh=1.0)
