"""Monte-Carlo inference over sampled chips, and the variation-free baseline."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cim_sim import chip_accuracy, program_chip
from .data_io import LabeledDataset
from .errors import FormatError, ParameterError
from .nn.layers import STREAM_CHIP, Network
from .tensor_core import RngStream
from .trainer import software_accuracy
from .variation import CellCharacterization, DeltaSampler

REPORT_FORMAT = "cimbnn-mc-report"


@dataclass
class McReport:
    v_wl: float
    v_bl: float
    accuracies: list = field(default_factory=list)
    n_runs: int = 0
    flipped: bool = False
    seed: int = 0

    def _offsets(self):
        # taken relative to the first run so that identical runs average exactly to that value
        a = np.asarray(self.accuracies, dtype=np.float64)
        return a[0], a - a[0]

    @property
    def mean(self):
        if not self.accuracies:
            return float("nan")
        ref, d = self._offsets()
        return float(ref + d.mean())

    @property
    def std(self):
        # population std (ddof=0) over the runs
        if not self.accuracies:
            return float("nan")
        return float(self._offsets()[1].std())

    @property
    def status(self):
        return "Flipped" if self.flipped else "ok"

    def to_dict(self):
        return {"format": REPORT_FORMAT, "version": 1, "v_wl": self.v_wl, "v_bl": self.v_bl,
                "status": self.status, "flipped": self.flipped, "seed": self.seed, "n_runs": self.n_runs,
                "accuracies": list(self.accuracies),
                "mean": None if self.flipped else self.mean, "std": None if self.flipped else self.std}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"report is not valid JSON: {e}") from e
        if d.get("format") != REPORT_FORMAT:
            raise FormatError("not an MC report")
        rep = cls(float(d["v_wl"]), float(d["v_bl"]), [float(a) for a in d["accuracies"]],
                  int(d["n_runs"]), bool(d["flipped"]), int(d["seed"]))
        if len(rep.accuracies) != rep.n_runs:
            raise FormatError("accuracy list length differs from n_runs")
        return rep

    def runs_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "accuracy"])
        for r, a in enumerate(self.accuracies):
            w.writerow([r, repr(a)])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def baseline_accuracy(model: Network, ds: LabeledDataset, thresh=0.5):
    if len(ds) == 0:
        raise ParameterError("dataset is empty")
    return software_accuracy(model, ds, thresh)


def mc_inference(model: Network, charac: CellCharacterization, ds: LabeledDataset, n_runs=20, seed=0,
                 act_stddev=None, thresh=0.5, threads=1) -> McReport:
    """Accuracy of ``n_runs`` independently sampled chips on the whole dataset.

    Chip ``r`` draws all its variation from ``(seed, CHIP, r)``, so the report
    does not depend on how runs are spread over ``threads``.
    """
    if len(ds) == 0:
        raise ParameterError("dataset is empty")
    if n_runs < 1:
        raise ParameterError("n_runs must be >= 1")
    if charac.flipped:
        return McReport(charac.v_wl, charac.v_bl, [], 0, True, seed)
    act_stddev = 0.1 * thresh if act_stddev is None else act_stddev
    sampler = DeltaSampler(charac, act_stddev)
    root = RngStream(seed, STREAM_CHIP)

    def run(r):
        chip = program_chip(model, sampler, root.derive(r), thresh)
        return chip_accuracy(chip, ds.images, ds.labels)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(run, range(n_runs)))
    else:
        accs = [run(r) for r in range(n_runs)]
    return McReport(charac.v_wl, charac.v_bl, accs, n_runs, False, seed)
