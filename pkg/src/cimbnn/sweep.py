"""Bias-voltage search: train and Monte-Carlo evaluate every characterized point."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import FormatError, NoViablePointError, ValidationError
from .evaluator import McReport, mc_inference
from .trainer import TrainConfig, train
from .variation import CellCharacterization, delta_moments, dump_characterization

MODES = ("retrain-per-point", "shared-model")
GRID_HEADER = ["v_wl", "v_bl", "mean_acc", "std_acc", "flipped"]


@dataclass
class SweepResult:
    rows: list                       # McReport per point, ordered by (v_wl, v_bl)
    best: tuple                      # (v_wl, v_bl)
    best_mean: float
    mode: str
    provenance: dict = field(default_factory=dict)

    def grid_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for r in self.rows:
            if r.flipped:
                w.writerow([repr(r.v_wl), repr(r.v_bl), "Flipped", "Flipped", "true"])
            else:
                w.writerow([repr(r.v_wl), repr(r.v_bl), repr(r.mean), repr(r.std), "false"])
        return buf.getvalue()

    def summary(self):
        return {"best": {"v_wl": self.best[0], "v_bl": self.best[1], "mean_acc": self.best_mean},
                "mode": self.mode, "provenance": self.provenance,
                "points": [r.to_dict() for r in self.rows]}

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.csv").write_text(self.grid_csv())
        (out / "sweep.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def parse_grid_csv(text):
    """Rows of the grid file as dicts (mean/std are None for flipped points)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != GRID_HEADER:
        raise FormatError(f"grid header {header} != {GRID_HEADER}")
    rows = []
    for rec in reader:
        flipped = rec[4] == "true"
        rows.append({"v_wl": float(rec[0]), "v_bl": float(rec[1]),
                     "mean_acc": None if flipped else float(rec[2]),
                     "std_acc": None if flipped else float(rec[3]), "flipped": flipped})
    return rows


def select_best(reports):
    """Highest mean accuracy among non-flipped points; ties go to lower v_wl, then lower v_bl."""
    best = None
    for r in sorted(reports, key=lambda r: (r.v_wl, r.v_bl)):
        if r.flipped:
            continue
        if best is None or r.mean > best.mean:
            best = r
    if best is None:
        raise NoViablePointError("every characterized bias point is flipped")
    return best


def reference_point(records):
    """Mildest non-flipped point (smallest weight-perturbation variance) for shared-model mode."""
    viable = [c for c in records if not c.flipped]
    if not viable:
        raise NoViablePointError("every characterized bias point is flipped")
    return min(viable, key=lambda c: (delta_moments(c)[1], c.v_wl, c.v_bl))


def config_hash(config: TrainConfig, table, mode, n_runs, seed):
    blob = json.dumps({"train": replace(config, variation=None).to_dict(), "mode": mode,
                       "n_runs": n_runs, "seed": seed}, sort_keys=True)
    h = hashlib.sha256(blob.encode())
    h.update(dump_characterization(table).encode())
    return h.hexdigest()


def run_sweep(table, arch, train_ds, test_ds, config: TrainConfig, mode="retrain-per-point", n_runs=20,
              seed=0, threads=1, reference=None, log=None) -> SweepResult:
    """Evaluate every point; flipped points are recorded but never trained or selected.

    ``retrain-per-point`` trains a variation-aware model per point;
    ``shared-model`` trains once at ``reference`` (default: the mildest viable
    point) and evaluates that model everywhere.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown sweep mode {mode!r}; choose from {MODES}")
    records = sorted(table, key=lambda c: (c.v_wl, c.v_bl))
    if not records:
        raise ValidationError("characterization table is empty")
    if all(c.flipped for c in records):
        raise NoViablePointError("every characterized bias point is flipped")
    say = log or (lambda msg: None)

    shared = None
    ref = None
    if mode == "shared-model":
        ref = reference_point(records) if reference is None else _find(records, reference)
        say(f"training shared model at v_wl={ref.v_wl} v_bl={ref.v_bl}")
        shared = train(replace(config, variation=ref), arch, train_ds).model

    def job(c: CellCharacterization):
        if c.flipped:
            say(f"v_wl={c.v_wl} v_bl={c.v_bl}: Flipped")
            return McReport(c.v_wl, c.v_bl, [], 0, True, seed)
        model = shared if shared is not None else train(replace(config, variation=c), arch, train_ds).model
        rep = mc_inference(model, c, test_ds, n_runs, seed, config.act_stddev, config.thresh)
        say(f"v_wl={c.v_wl} v_bl={c.v_bl}: mean {rep.mean:.4f} std {rep.std:.4f}")
        return rep

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(job, records))
    else:
        reports = [job(c) for c in records]
    best = select_best(reports)
    prov = {"seed": seed, "train_seed": config.seed, "n_runs": n_runs,
            "config_hash": config_hash(config, records, mode, n_runs, seed)}
    if ref is not None:
        prov["reference"] = [ref.v_wl, ref.v_bl]
    return SweepResult(reports, (best.v_wl, best.v_bl), best.mean, mode, prov)


def _find(records, key):
    for c in records:
        if (c.v_wl, c.v_bl) == tuple(key):
            if c.flipped:
                raise ValidationError(f"reference point {key} is flipped")
            return c
    raise ValidationError(f"reference point {key} is not in the table")
