"""Cell-current statistics -> stochastic weight perturbations.

A :class:`CellCharacterization` stores the log-normal parameters of the bitline
(bl) and complementary bitline (blb) cell currents of a '+1' cell with its
wordline on, measured at one (V_WL, V_BL) bias point. A :class:`DeltaSampler`
turns it into the perturbations

    d_plus  = (i_bl - i_blb) / IM - 1
    d_minus = (i_blb - i_bl) / IM + 1

that shift a stored +1 / -1 weight. The '-1' cell is the mirror of the '+1'
cell, so both use the same record.

Records are read from and written to a JSON document (see
:func:`save_characterization`). The synthetic generator is a behavioural
stand-in for transistor-level Monte-Carlo data and marks its output
``"synthetic": true``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FlippedCharacterizationError, FormatError, ParameterError, ValidationError
from .tensor_core import RngStream

FORMAT_NAME = "cimbnn-characterization"
FORMAT_VERSION = 1
UNITS = {
    "v_wl": "V",
    "v_bl": "V",
    "mu_log_ibl": "ln(uA)",
    "sigma_log_ibl": "dimensionless",
    "mu_log_iblb": "ln(uA)",
    "sigma_log_iblb": "dimensionless",
    "im": "uA",
    "corr": "dimensionless",
    "flipped": "boolean",
}
_REQUIRED = ("v_wl", "v_bl", "mu_log_ibl", "sigma_log_ibl", "mu_log_iblb", "sigma_log_iblb", "flipped")


@dataclass(frozen=True)
class CellCharacterization:
    v_wl: float
    v_bl: float
    mu_log_ibl: float
    sigma_log_ibl: float
    mu_log_iblb: float
    sigma_log_iblb: float
    im: float | None = None
    corr: float = 0.0
    flipped: bool = False

    @property
    def key(self):
        return (self.v_wl, self.v_bl)

    @property
    def current_margin(self) -> float:
        """IM; derived from the nominal (median) currents when not given."""
        if self.im is not None:
            return self.im
        # np.exp, not math.exp: must round identically to the vectorised draws
        return float(np.exp(self.mu_log_ibl) - np.exp(self.mu_log_iblb))

    def validate(self, label=None):
        label = label or f"record (v_wl={self.v_wl}, v_bl={self.v_bl})"
        values = [self.v_wl, self.v_bl, self.mu_log_ibl, self.sigma_log_ibl, self.mu_log_iblb, self.sigma_log_iblb, self.corr]
        if self.im is not None:
            values.append(self.im)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"{label}: non-finite field")
        if self.sigma_log_ibl < 0 or self.sigma_log_iblb < 0:
            raise ValidationError(f"{label}: sigma fields must be >= 0")
        if not -1.0 <= self.corr <= 1.0:
            raise ValidationError(f"{label}: corr must lie in [-1, 1]")
        if self.im is not None and self.im <= 0:
            raise ValidationError(f"{label}: im must be > 0")
        if not self.flipped:
            if self.mu_log_ibl <= self.mu_log_iblb:
                raise ValidationError(f"{label}: median i_bl must exceed median i_blb for a non-flipped cell")
            if self.current_margin <= 0:
                raise ValidationError(f"{label}: derived im must be > 0")
        return self

    def scaled(self, factor: float) -> "CellCharacterization":
        """Same medians and IM, log-spreads multiplied by ``factor``."""
        return replace(self, sigma_log_ibl=self.sigma_log_ibl * factor,
                       sigma_log_iblb=self.sigma_log_iblb * factor,
                       im=self.current_margin)


def zero_variation(i_bl=10.0, i_blb=2.0, v_wl=0.9, v_bl=0.4) -> CellCharacterization:
    return CellCharacterization(v_wl, v_bl, math.log(i_bl), 0.0, math.log(i_blb), 0.0)


class DeltaSampler:
    def __init__(self, charac: CellCharacterization, act_stddev: float = 0.0):
        if charac.flipped:
            raise FlippedCharacterizationError(charac.v_wl, charac.v_bl)
        charac.validate()
        if act_stddev < 0:
            raise ParameterError("act_stddev must be >= 0")
        self.charac = charac
        self.act_stddev = float(act_stddev)
        self.im = charac.current_margin

    def sample_currents(self, rng: RngStream, n):
        """Paired (i_bl, i_blb) draws in uA; optional correlation of the log-currents."""
        c = self.charac
        z = rng.generator.standard_normal((2, n))
        z_blb = c.corr * z[0] + math.sqrt(1.0 - c.corr * c.corr) * z[1]
        i_bl = np.exp(c.mu_log_ibl + c.sigma_log_ibl * z[0])
        i_blb = np.exp(c.mu_log_iblb + c.sigma_log_iblb * z_blb)
        return i_bl, i_blb

    def sample_delta_plus(self, rng: RngStream, n):
        i_bl, i_blb = self.sample_currents(rng, n)
        return (i_bl - i_blb) / self.im - 1.0

    def sample_delta_minus(self, rng: RngStream, n):
        i_bl, i_blb = self.sample_currents(rng, n)
        return (i_blb - i_bl) / self.im + 1.0

    def sample_act(self, rng: RngStream, n):
        return self.act_stddev * rng.generator.standard_normal(n)

    @property
    def is_deterministic(self):
        c = self.charac
        return c.sigma_log_ibl == 0 and c.sigma_log_iblb == 0 and self.act_stddev == 0

    def delta_plus_moments(self):
        """Analytic (mean, variance, 4th central moment) of d_plus."""
        return delta_moments(self.charac)


def delta_moments(charac: CellCharacterization):
    """Exact moments of (i_bl - i_blb)/IM - 1 for log-normal currents.

    Raw moments of the difference D = X - Y come from E[X^a Y^b], which for
    jointly normal logs is exp(a mu_x + b mu_y + (a^2 s_x^2 + 2ab rho s_x s_y + b^2 s_y^2)/2).
    """
    c = charac
    im = c.current_margin
    mx, sx, my, sy, rho = c.mu_log_ibl, c.sigma_log_ibl, c.mu_log_iblb, c.sigma_log_iblb, c.corr

    def joint(a, b):
        return math.exp(a * mx + b * my + 0.5 * (a * a * sx * sx + 2 * a * b * rho * sx * sy + b * b * sy * sy))

    raw = [sum(math.comb(k, j) * joint(j, k - j) * (-1) ** (k - j) for j in range(k + 1)) for k in range(5)]
    mean_d = raw[1]
    var_d = raw[2] - mean_d ** 2
    m4_d = raw[4] - 4 * mean_d * raw[3] + 6 * mean_d ** 2 * raw[2] - 3 * mean_d ** 4
    return mean_d / im - 1.0, var_d / im ** 2, m4_d / im ** 4


# ----------------------------------------------------------------- file I/O

@dataclass
class CharacterizationTable:
    records: list
    synthetic: bool = False
    metadata: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def find(self, v_wl, v_bl) -> CellCharacterization:
        for r in self.records:
            if math.isclose(r.v_wl, v_wl, abs_tol=1e-9) and math.isclose(r.v_bl, v_bl, abs_tol=1e-9):
                return r
        raise KeyError(f"no record at v_wl={v_wl}, v_bl={v_bl}")


def _record_from_dict(d, index):
    label = f"record {index}"
    if not isinstance(d, dict):
        raise FormatError(f"{label}: expected an object")
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise FormatError(f"{label}: missing fields {missing}")
    unknown = set(d) - set(UNITS)
    if unknown:
        raise FormatError(f"{label}: unknown fields {sorted(unknown)}")
    try:
        rec = CellCharacterization(
            v_wl=float(d["v_wl"]), v_bl=float(d["v_bl"]),
            mu_log_ibl=float(d["mu_log_ibl"]), sigma_log_ibl=float(d["sigma_log_ibl"]),
            mu_log_iblb=float(d["mu_log_iblb"]), sigma_log_iblb=float(d["sigma_log_iblb"]),
            im=None if d.get("im") is None else float(d["im"]),
            corr=float(d.get("corr", 0.0)),
            flipped=d["flipped"],
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{label}: {exc}") from None
    if not isinstance(rec.flipped, bool):
        raise FormatError(f"{label}: flipped must be true/false")
    rec.validate(f"{label} (v_wl={rec.v_wl}, v_bl={rec.v_bl})")
    return rec


def parse_characterization(text: str) -> CharacterizationTable:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"characterization file is not valid JSON: {exc}") from None
    if isinstance(doc, list):
        doc = {"records": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("records"), list):
        raise FormatError("characterization file needs a 'records' list")
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise FormatError(f"unexpected format tag {doc.get('format')!r}")
    records = [_record_from_dict(d, i) for i, d in enumerate(doc["records"])]
    seen = set()
    for i, r in enumerate(records):
        if r.key in seen:
            raise ValidationError(f"record {i}: duplicate bias point (v_wl={r.v_wl}, v_bl={r.v_bl})")
        seen.add(r.key)
    return CharacterizationTable(records, bool(doc.get("synthetic", False)), dict(doc.get("metadata", {})))


def load_characterization(path) -> CharacterizationTable:
    return parse_characterization(Path(path).read_text(encoding="utf-8"))


def dump_characterization(table) -> str:
    if not isinstance(table, CharacterizationTable):
        table = CharacterizationTable(list(table))
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "synthetic": table.synthetic,
        "units": UNITS,
        "metadata": table.metadata,
        "records": [asdict(r) for r in table.records],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_characterization(table, path):
    Path(path).write_text(dump_characterization(table), encoding="utf-8")


# --------------------------------------------------------------- synthetic

DEFAULT_V_WL = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_V_BL = (0.1, 0.2, 0.3, 0.4)


def default_grid():
    return [(w, b) for w in DEFAULT_V_WL for b in DEFAULT_V_BL]


@dataclass(frozen=True)
class SyntheticKnobs:
    """Behavioural cell-current model.

    median i_bl  = i_on * (overdrive / overdrive_ref)**alpha * (v_bl / v_bl_ref)**beta
    median i_blb = blb_ratio * median i_bl
    sigma_bl     = sigma_ref * (overdrive_ref / overdrive)**sigma_wl_exp * (v_bl_ref / v_bl)**sigma_bl_exp
    sigma_blb    = blb_sigma_factor * sigma_bl
    with overdrive = v_wl - v_t. A point flips when v_wl / v_bl > flip_ratio.
    ``jitter`` adds seeded multiplicative noise to the spreads.
    """
    i_on: float = 20.0
    v_t: float = 0.2
    v_wl_ref: float = 0.9
    v_bl_ref: float = 0.4
    alpha: float = 1.3
    beta: float = 0.5
    blb_ratio: float = 0.25
    sigma_ref: float = 0.08
    sigma_wl_exp: float = 1.0
    sigma_bl_exp: float = 0.25
    blb_sigma_factor: float = 1.5
    sigma_scale: float = 1.0
    flip_ratio: float = 4.0
    jitter: float = 0.0


def generate_synthetic_characterization(grid=None, knobs: SyntheticKnobs | None = None,
                                        rng: RngStream | None = None) -> CharacterizationTable:
    grid = default_grid() if grid is None else list(grid)
    if not grid:
        raise ParameterError("grid must be nonempty")
    knobs = knobs or SyntheticKnobs()
    rng = rng or RngStream(0)
    ov_ref = knobs.v_wl_ref - knobs.v_t
    jitter = np.exp(knobs.jitter * rng.generator.standard_normal(len(grid)))
    records = []
    for (v_wl, v_bl), jit in zip(grid, jitter):
        overdrive = v_wl - knobs.v_t
        if overdrive <= 0 or v_bl <= 0:
            raise ParameterError(f"bias point ({v_wl}, {v_bl}) is below the model's validity range")
        median_bl = knobs.i_on * (overdrive / ov_ref) ** knobs.alpha * (v_bl / knobs.v_bl_ref) ** knobs.beta
        median_blb = knobs.blb_ratio * median_bl
        sigma = knobs.sigma_scale * knobs.sigma_ref * (ov_ref / overdrive) ** knobs.sigma_wl_exp \
            * (knobs.v_bl_ref / v_bl) ** knobs.sigma_bl_exp * float(jit)
        records.append(CellCharacterization(
            v_wl=float(v_wl), v_bl=float(v_bl),
            mu_log_ibl=math.log(median_bl), sigma_log_ibl=sigma,
            mu_log_iblb=math.log(median_blb), sigma_log_iblb=knobs.blb_sigma_factor * sigma,
            im=None, corr=0.0,
            flipped=bool(v_wl / v_bl > knobs.flip_ratio + 1e-12),
        ))
    meta = {"generator": "synthetic behavioural model", "knobs": asdict(knobs), "seed": rng.seed}
    return CharacterizationTable(records, synthetic=True, metadata=meta)
