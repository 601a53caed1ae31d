"""Variation-aware training loop.

Each minibatch gets its own random stream ``(seed, TRAIN, epoch, batch)``;
every CIM layer derives ``(layer, group, 0)`` for weight perturbations and
``(layer, group, 1)`` for threshold offsets, so fresh variation is drawn per
minibatch and no draw depends on execution order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_io import LabeledDataset, stratified_split
from .errors import ParameterError, ValidationError
from .mapping import DEFAULT_ARRAY_SIZE
from .nn.arch import NetworkSpec, infer_shapes
from .nn.checkpoint import load_checkpoint, load_into, restore_optimizer, save_checkpoint, snap_f32
from .nn.functional import softmax_cross_entropy
from .nn.layers import (STREAM_SHUFFLE, STREAM_TRAIN, CimLayer, Network, RunContext, build_network)
from .nn.optim import Adam, PlateauScheduler
from .tensor_core import RngStream
from .variation import CellCharacterization, DeltaSampler

METRICS_HEADER = ["epoch", "train_loss", "val_acc", "lr"]


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 0.01
    lr_decay: float = 0.31
    patience: int = 10
    min_delta: float = 0.001
    thresh: float = 0.5
    act_stddev: float | None = None       # None -> 0.1 * thresh
    array_size: int = DEFAULT_ARRAY_SIZE
    seed: int = 0
    batch_size: int = 128
    val_fraction: float = 0.1
    ste_lo: float = 0.0
    ste_hi: float = 1.0
    variation: CellCharacterization | None = None
    lr_scale: str = "init-std"            # or "none"
    warm_start: str | None = None

    def __post_init__(self):
        if not 0.0 < self.thresh < 1.0:
            raise ParameterError("thresh must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 2:
            raise ParameterError("epochs must be >= 1 and batch_size >= 2")
        if self.lr <= 0:
            raise ParameterError("learning rate must be > 0")
        if self.lr_scale not in ("init-std", "none"):
            raise ParameterError(f"unknown lr_scale mode {self.lr_scale!r}")
        if self.act_stddev is None:
            self.act_stddev = 0.1 * self.thresh

    def sampler(self):
        if self.variation is None:
            return None
        return DeltaSampler(self.variation, self.act_stddev)

    def to_dict(self):
        d = asdict(self)
        if self.variation is not None:
            d["variation"] = asdict(self.variation)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training options {sorted(unknown)}")
        if d.get("variation") is not None and not isinstance(d["variation"], CellCharacterization):
            d["variation"] = CellCharacterization(**d["variation"])
        return cls(**d)


@dataclass
class TrainResult:
    model: Network
    optimizer: Adam
    scheduler: PlateauScheduler
    history: list = field(default_factory=list)
    epoch: int = 0


def forward_layer_variation_aware(layer: CimLayer, a_prev, ctx: RunContext):
    """One CIM layer: split, sign, polarize, matmul, batch norm, clip, noisy threshold, merge fraction."""
    if not isinstance(layer, CimLayer):
        raise ValidationError(f"{layer.name} is not a CIM layer")
    return layer.forward(a_prev, ctx), layer.cache


def backward_layer(layer: CimLayer, grad_out):
    """Gradients of a CIM layer; returns ``(grad_in, grad_weight, (grad_gamma, grad_beta))``."""
    g = layer.backward(grad_out)
    return g, layer.grads["weight"], (layer.grads["bn.gamma"], layer.grads["bn.beta"])


def software_accuracy(model: Network, ds: LabeledDataset, thresh=0.5, batch_size=500):
    """Deterministic split-BNN accuracy with running batch-norm statistics and no variation."""
    if len(ds) == 0:
        return float("nan")
    pred = model.predict(ds.images, RunContext(training=False, thresh=thresh), batch_size)
    return float((pred == ds.labels).mean())


def check_dataset(arch: NetworkSpec, ds: LabeledDataset):
    if len(ds) == 0:
        raise ValidationError("dataset is empty")
    if tuple(ds.shape) != tuple(arch.input_shape):
        raise ValidationError(f"dataset images {tuple(ds.shape)} do not fit {arch.name} input {tuple(arch.input_shape)}")
    if ds.num_classes != arch.num_classes:
        raise ValidationError(f"dataset has {ds.num_classes} classes, {arch.name} predicts {arch.num_classes}")
    infer_shapes(arch)


def make_optimizer(model: Network, config: TrainConfig):
    scales = model.lr_scales() if config.lr_scale == "init-std" else {}
    return Adam(model.named_params(), scales, model.clipped_params())


def train_epoch(model, opt, ds, config, epoch, lr, sampler):
    n = len(ds)
    order = RngStream(config.seed, STREAM_SHUFFLE).derive(epoch).generator.permutation(n)
    stream = RngStream(config.seed, STREAM_TRAIN).derive(epoch)
    total, seen = 0.0, 0
    for b, start in enumerate(range(0, n, config.batch_size)):
        idx = order[start:start + config.batch_size]
        if len(idx) < 2:   # batch norm needs two samples
            continue
        ctx = RunContext(training=True, thresh=config.thresh, sampler=sampler, rng=stream.derive(b),
                         ste_lo=config.ste_lo, ste_hi=config.ste_hi)
        logits = model.forward(ds.images[idx], ctx)
        loss, g = softmax_cross_entropy(logits, ds.labels[idx])
        model.backward(g)
        opt.step(model.named_grads(), lr)
        total += loss * len(idx)
        seen += len(idx)
    return total / max(seen, 1)


def _state_arrays(model, opt):
    return (list(model.named_params().values()) + list(model.named_buffers().values())
            + list(opt.m.values()) + list(opt.v.values()))


def train(config: TrainConfig, arch: NetworkSpec, train_ds: LabeledDataset, val_ds: LabeledDataset | None = None,
          out_dir=None, resume=None, log=None) -> TrainResult:
    """Run the epoch loop; optionally write ``metrics.csv`` and ``checkpoint/`` under ``out_dir``.

    State is rounded to float32 at every epoch end, so what is checkpointed is
    exactly what training continues from and ``resume`` is bit-identical.
    """
    check_dataset(arch, train_ds)
    if val_ds is None and config.val_fraction > 0:
        train_ds, val_ds = stratified_split(train_ds, config.val_fraction, config.seed)
        check_dataset(arch, train_ds)
    sampler = config.sampler()
    model = build_network(arch, config.array_size, config.seed)
    opt = make_optimizer(model, config)
    sched = PlateauScheduler(config.lr, config.lr_decay, config.patience, config.min_delta)
    start = 0
    history = []
    if config.warm_start and resume is None:
        _, _, tensors = load_checkpoint(config.warm_start, build=False)
        load_into(model, tensors)
    if resume is not None:
        _, manifest, tensors = load_checkpoint(resume, build=False)
        load_into(model, tensors)
        restore_optimizer(opt, manifest, tensors)
        sched.load_state_dict(manifest["scheduler"])
        start = manifest["epoch"]
        history = list(manifest["config"].get("history", []))
    snap_f32(_state_arrays(model, opt))

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = out / "metrics.csv"
        with open(metrics, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for row in history:
                w.writerow([row[k] for k in METRICS_HEADER])

    for epoch in range(start, config.epochs):
        lr = sched.lr
        loss = train_epoch(model, opt, train_ds, config, epoch, lr, sampler)
        snap_f32(_state_arrays(model, opt))
        val_acc = software_accuracy(model, val_ds, config.thresh) if val_ds is not None and len(val_ds) else float("nan")
        sched.step(val_acc if np.isfinite(val_acc) else -loss)
        row = {"epoch": epoch + 1, "train_loss": loss, "val_acc": val_acc, "lr": lr}
        history.append(row)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {loss:.4f} val_acc {val_acc:.4f} lr {lr:.6g}")
        if out is not None:
            with open(metrics, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow([row[k] for k in METRICS_HEADER])
            save_checkpoint(out / "checkpoint", model, opt, sched, epoch + 1,
                            {"train": config.to_dict(), "history": history})
    return TrainResult(model, opt, sched, history, config.epochs)


def read_metrics(path):
    with open(path, newline="") as f:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_acc": float(r["val_acc"]), "lr": float(r["lr"])} for r in csv.DictReader(f)]


def config_json(config: TrainConfig):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)
