"""Input splitting: group counts, row partitions and the digital merge."""
from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .nn.arch import NetworkSpec

DEFAULT_ARRAY_SIZE = 256


def compute_n_groups(input_size: int, array_size: int = DEFAULT_ARRAY_SIZE) -> int:
    """Smallest n >= ceil(input_size / array_size) that divides input_size."""
    if input_size < 1 or array_size < 1:
        raise ParameterError(f"input_size and array_size must be >= 1 (got {input_size}, {array_size})")
    n = math.ceil(input_size / array_size)
    while input_size % n:
        n += 1
    return n


def group_slices(input_size, n_groups):
    if n_groups < 1 or input_size % n_groups:
        raise DimensionError(f"{input_size} rows cannot be split into {n_groups} equal groups")
    r = input_size // n_groups
    return [slice(g * r, (g + 1) * r) for g in range(n_groups)]


def split(x, n_groups, axis=0):
    """Equal contiguous chunks along ``axis`` (the input-row dimension)."""
    x = np.asarray(x)
    slices = group_slices(x.shape[axis], n_groups)
    idx = [slice(None)] * x.ndim
    out = []
    for s in slices:
        idx[axis] = s
        out.append(x[tuple(idx)])
    return out


def merge_mean(group_bits):
    """Fraction of groups whose bit is set; stacked (G, ...) array or list."""
    if isinstance(group_bits, (list, tuple)):
        if not group_bits:
            raise ParameterError("merge needs at least one group")
        shapes = {np.shape(b) for b in group_bits}
        if len(shapes) != 1:
            raise DimensionError(f"group outputs differ in shape: {sorted(shapes)}")
        group_bits = np.stack(group_bits)
    return np.asarray(group_bits, dtype=np.float64).mean(axis=0)


def merge(group_bits, thresh=0.5):
    """Digital majority vote: 1 where the fraction of set groups reaches ``thresh``."""
    if not 0.0 < thresh < 1.0:
        raise ParameterError("merge threshold must lie in (0, 1)")
    return (merge_mean(group_bits) >= thresh).astype(np.float64)


@dataclass(frozen=True)
class PlanRow:
    layer: int
    input_size: int
    input_label: str
    n_groups: int | None
    rows_per_group: int | None

    @property
    def digital(self):
        return self.n_groups is None


@dataclass(frozen=True)
class SplitPlan:
    arch: str
    array_size: int
    rows: tuple

    def cim_rows(self):
        return [r for r in self.rows if not r.digital]

    def table_text(self):
        header = ("Layer", "Input count per output", f"Number of groups (Input size = {self.array_size})")
        body = [(str(r.layer), r.input_label, "-" if r.digital else str(r.n_groups)) for r in self.rows]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header] + body]
        return "\n".join(lines) + "\n"

    def table_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "input_count_per_output", "n_groups"])
        for r in self.rows:
            w.writerow([r.layer, r.input_label, "-" if r.digital else r.n_groups])
        return buf.getvalue()


def plan_network(arch: NetworkSpec, array_size: int = DEFAULT_ARRAY_SIZE) -> SplitPlan:
    rows = []
    for number, i in enumerate(arch.weighted_indices(), start=1):
        l = arch.layers[i]
        if l.split == "cim":
            n = compute_n_groups(l.input_size, array_size)
            rows.append(PlanRow(number, l.input_size, l.input_label, n, l.input_size // n))
        else:
            rows.append(PlanRow(number, l.input_size, l.input_label, None, None))
    return SplitPlan(arch.name, array_size, tuple(rows))
