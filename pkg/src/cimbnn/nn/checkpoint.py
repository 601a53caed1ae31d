"""Checkpoint directories: a JSON manifest plus one raw float32 blob per tensor.

Layout::

    <dir>/manifest.json
    <dir>/tensors/<name>.f32

Each blob is the tensor in C (row-major) order, little-endian IEEE-754
binary32, no header; shape and file name are listed in the manifest. Tensor
names are the dotted parameter paths (``layer3.weight``), optimizer moments
are stored under ``adam.m.<name>`` and ``adam.v.<name>``. Nothing time- or
host-dependent is written, so identical states give identical bytes.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .arch import NetworkSpec

FORMAT = "cimbnn-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f4")


def snap_f32(arrays):
    """Round every array to float32 precision in place (the stored precision)."""
    for a in arrays:
        a[...] = a.astype(np.float32).astype(np.float64)


def _tensors(model, optimizer):
    out = dict(sorted(model.named_params().items()))
    out.update(sorted(model.named_buffers().items()))
    if optimizer is not None:
        out.update({f"adam.m.{k}": v for k, v in sorted(optimizer.m.items())})
        out.update({f"adam.v.{k}": v for k, v in sorted(optimizer.v.items())})
    return out


def save_checkpoint(path, model, optimizer=None, scheduler=None, epoch=0, config=None):
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in _tensors(model, optimizer).items():
        fname = f"tensors/{name}.f32"
        np.ascontiguousarray(arr, dtype=_DTYPE).tofile(path / fname)
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "byte_order": "little",
        "dtype": "float32",
        "layout": "C",
        "arch": model.spec.to_dict(),
        "array_size": model.array_size,
        "seed": model.seed,
        "epoch": int(epoch),
        "adam_t": optimizer.t if optimizer is not None else 0,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "config": config or {},
        "tensors": entries,
    }
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path / "manifest.json")
    return path


def read_manifest(path):
    try:
        manifest = json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read checkpoint manifest in {path}: {e}") from e
    if manifest.get("format") != FORMAT or manifest.get("byte_order") != "little" or manifest.get("dtype") != "float32":
        raise FormatError(f"{path} is not a {FORMAT} directory")
    return manifest


def read_tensor(path, entry):
    data = np.fromfile(Path(path) / entry["file"], dtype=_DTYPE)
    shape = tuple(entry["shape"])
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"{entry['file']}: {data.size} values, expected shape {shape}")
    return data.reshape(shape).astype(np.float64)


def load_checkpoint(path, build=True):
    """Rebuild the network stored at ``path``; returns ``(model, manifest, tensors)``.

    ``tensors`` holds every stored array (including optimizer moments) so a
    trainer can restore its own state with :func:`restore_optimizer`.
    """
    from .layers import build_network

    manifest = read_manifest(path)
    tensors = {e["name"]: read_tensor(path, e) for e in manifest["tensors"]}
    model = None
    if build:
        spec = NetworkSpec.from_dict(manifest["arch"])
        model = build_network(spec, manifest["array_size"], manifest["seed"])
        load_into(model, tensors)
    return model, manifest, tensors


def load_into(model, tensors):
    """Copy stored values into the model's arrays in place."""
    targets = {**model.named_params(), **model.named_buffers()}
    for name, arr in targets.items():
        if name not in tensors:
            raise FormatError(f"checkpoint lacks tensor {name}")
        if tensors[name].shape != arr.shape:
            raise FormatError(f"{name}: stored shape {tensors[name].shape} != model shape {arr.shape}")
        arr[...] = tensors[name]


def restore_optimizer(optimizer, manifest, tensors):
    for name in optimizer.m:
        optimizer.m[name][...] = tensors[f"adam.m.{name}"]
        optimizer.v[name][...] = tensors[f"adam.v.{name}"]
    optimizer.t = int(manifest["adam_t"])
