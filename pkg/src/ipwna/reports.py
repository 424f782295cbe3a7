"""File formats: cohort CSV ingestion, result reports, simulation tables.

The cohort CSV schema is ``id,treatment,time,event,x1,...,xp`` (header
required).  Estimation results serialize to a versioned JSON document and
to per-curve CSV files with the fixed column set
``time,estimate,se_naive,se_corrected,ci_lo,ci_hi``.  Monte Carlo reports
serialize to one CSV table per estimand (times as columns, methods as
rows, three decimals to mirror the published layout) plus a full-precision
JSON document.  All numbers in JSON/CSV round-trip exactly (17 significant
digits).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Cohort, build_cohort
from .estimator import IPWNelsonAalen
from .exceptions import ValidationError
from .simulation import DGPConfig, MCReport

SCHEMA_VERSION = 1

CURVE_COLUMNS = ["time", "estimate", "se_naive", "se_corrected", "ci_lo", "ci_hi"]


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


# ------------------------------------------------------------- cohort CSV

def read_cohort_csv(path, n_event_types=None, t_star=None) -> Cohort:
    """Load a cohort from the canonical CSV schema.

    The number of event types defaults to the largest event code seen.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = ["id", "treatment", "time", "event"]
        for k, name in enumerate(expected):
            if k >= len(header) or header[k] != name:
                raise ValidationError(
                    f"{path}: malformed header, expected column {k + 1} to be "
                    f"{name!r} (header starts {header[:4]})")
        p = len(header) - 4
        for k in range(p):
            if header[4 + k] != f"x{k + 1}":
                raise ValidationError(
                    f"{path}: malformed header, expected covariate column "
                    f"x{k + 1}, found {header[4 + k]!r}")
        rows = [row for row in reader if row]
    if n_event_types is None:
        try:
            n_event_types = max(int(float(r[3])) for r in rows) if rows else 0
        except (ValueError, IndexError):
            n_event_types = 0  # build_cohort will name the offending row
        n_event_types = max(n_event_types, 1)
    return build_cohort(rows, n_event_types=n_event_types, t_star=t_star)


def read_scores_csv(path) -> np.ndarray:
    """One score per line; an optional header line is skipped."""
    path = Path(path)
    values = []
    with path.open(encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                if k == 0:
                    continue  # header line
                raise ValidationError(
                    f"{path}: non-numeric score at line {k + 1}") from None
    return np.asarray(values, dtype=float)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class EstimateRequest:
    """Everything the estimate command needs to run."""

    data: str
    events: tuple
    times: tuple
    ps_model: str = "logistic"
    known_scores_path: str | None = None
    variance: tuple = ("naive", "corrected")
    bootstrap_reps: int = 200
    seed: int = 0
    conf_level: float = 0.95
    out: str = "."
    format: str = "json"

    def __post_init__(self):
        if not self.events:
            raise ValidationError("at least one target event is required")
        if not self.times or any(t <= 0 for t in self.times):
            raise ValidationError("evaluation times must be positive")
        if not self.variance:
            raise ValidationError("at least one variance method is required")
        if self.format not in ("json", "csv"):
            raise ValidationError("format must be json or csv")


@dataclass
class Report:
    """Machine-readable estimation results (schema-versioned)."""

    schema_version: int
    conf_level: float
    seed: int
    propensity: dict
    rows: list
    curves: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Report":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported report schema {raw.get('schema_version')!r}")
        return cls(**raw)


def _curve_payload(table, times) -> dict:
    se = {m: [float(v) for v in vals] for m, vals in table.se.items()}
    return {
        "times": [float(t) for t in times],
        "estimate": [float(v) for v in table.estimate],
        "se": se,
        "ci_lo": [float(v) for v in table.ci_lower],
        "ci_hi": [float(v) for v in table.ci_upper],
        "se_method": table.se_method,
    }


def build_report(est: IPWNelsonAalen, events, times, seed) -> Report:
    """Collect summary rows and full curves from a fitted estimator."""
    ps = est.propensity_
    propensity = {
        "kind": ps.kind,
        "theta": [float(v) for v in ps.theta],
        "min_score": ps.diagnostics.min_score,
        "max_score": ps.diagnostics.max_score,
        "n_iter": ps.diagnostics.n_iter,
        "gradient_norm": ps.diagnostics.gradient_norm,
        "warnings": list(ps.diagnostics.warnings),
    }
    times = [float(t) for t in times]
    rows = []
    curves = {}
    for j in events:
        for arm in (0, 1):
            tab = est.cumulative_incidence(j, arm, times)
            for k, t in enumerate(times):
                rows.append({
                    "target": "cif", "event": j, "arm": arm, "time": t,
                    "estimate": float(tab.estimate[k]),
                    "se": {m: float(v[k]) for m, v in tab.se.items()},
                    "ci_lo": float(tab.ci_lower[k]),
                    "ci_hi": float(tab.ci_upper[k]),
                    "pvalue": None,
                })
        tau = est.average_treatment_effect(j, times)
        for k, t in enumerate(times):
            rows.append({
                "target": "ate", "event": j, "arm": None, "time": t,
                "estimate": float(tau.estimate[k]),
                "se": {m: float(v[k]) for m, v in tau.se.items()},
                "ci_lo": float(tau.ci_lower[k]),
                "ci_hi": float(tau.ci_upper[k]),
                "pvalue": float(tau.pvalue[k]) if tau.pvalue is not None else None,
            })
        for arm in (0, 1):
            grid = est.grids_[arm]
            curves[f"cumhaz_event{j}_arm{arm}"] = _curve_payload(
                est.cumulative_hazard(j, arm, grid), grid)
            curves[f"cif_event{j}_arm{arm}"] = _curve_payload(
                est.cumulative_incidence(j, arm, grid), grid)
        merged = est.ate_grid_ if hasattr(est, "ate_grid_") else np.unique(
            np.concatenate([est.grids_[0], est.grids_[1]]))
        curves[f"ate_event{j}"] = _curve_payload(
            est.average_treatment_effect(j, merged), merged)
    return Report(schema_version=SCHEMA_VERSION, conf_level=est.conf_level,
                  seed=seed, propensity=propensity, rows=rows, curves=curves)


def write_report_json(report: Report, out_dir) -> Path:
    out = Path(out_dir) / "report.json"
    out.write_text(report.to_json(), encoding="utf-8")
    return out


def read_report_json(path) -> Report:
    return Report.from_json(Path(path).read_text(encoding="utf-8"))


def write_report_csv(report: Report, out_dir) -> list:
    """One file per curve with the fixed column schema, plus a summary table."""
    out_dir = Path(out_dir)
    written = []
    for name, curve in sorted(report.curves.items()):
        path = out_dir / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            se = curve["se"]
            for k, t in enumerate(curve["times"]):
                w.writerow([
                    _fmt(t), _fmt(curve["estimate"][k]),
                    _fmt(se["naive"][k]) if "naive" in se else "",
                    _fmt(se["corrected"][k]) if "corrected" in se else "",
                    _fmt(curve["ci_lo"][k]), _fmt(curve["ci_hi"][k]),
                ])
        written.append(path)
    path = out_dir / "summary.csv"
    methods = sorted({m for row in report.rows for m in row["se"]})
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "event", "arm", "time", "estimate"]
                   + [f"se_{m}" for m in methods] + ["ci_lo", "ci_hi", "pvalue"])
        for row in report.rows:
            w.writerow([row["target"], row["event"],
                        "" if row["arm"] is None else row["arm"],
                        _fmt(row["time"]), _fmt(row["estimate"])]
                       + [_fmt(row["se"].get(m)) for m in methods]
                       + [_fmt(row["ci_lo"]), _fmt(row["ci_hi"]),
                          _fmt(row["pvalue"])])
    written.append(path)
    return written


# --------------------------------------------------------- simulation I/O

_SIM_KEYS = {"n", "reps", "seed", "ps_kind", "bootstrap_reps", "bootstrap_first",
             "eval_times", "truth_draws", "truth_seed", "workers"}


def load_sim_config(path) -> dict:
    """Parse and validate a simulation config file (JSON key-value tree)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _SIM_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("n", "reps", "seed"):
        if key not in raw:
            raise ValidationError(f"{path}: missing required key {key!r}")
    cfg = {"ps_kind": "logistic", "bootstrap_reps": 0, "bootstrap_first": 200,
           "workers": None}
    cfg.update(raw)
    if cfg["ps_kind"] not in ("logistic", "probit", "constant"):
        raise ValidationError(f"{path}: ps_kind must be logistic, probit or constant")
    return cfg


def dgp_config_from_sim(cfg: dict) -> DGPConfig:
    kwargs = {"n": int(cfg["n"]), "seed": int(cfg["seed"])}
    if "eval_times" in cfg:
        kwargs["eval_times"] = tuple(float(t) for t in cfg["eval_times"])
    if "truth_draws" in cfg:
        kwargs["truth_draws"] = int(cfg["truth_draws"])
    if "truth_seed" in cfg:
        kwargs["truth_seed"] = int(cfg["truth_seed"])
    return DGPConfig(**kwargs)


def _mc_json_payload(report: MCReport) -> dict:
    blocks = {}
    for label, block in report.estimands.items():
        blocks[label] = {stat: {m: [float(v) for v in vals]
                                for m, vals in d.items()}
                         for stat, d in block.items()}
    return {
        "schema_version": SCHEMA_VERSION,
        "ps_kind": report.ps_kind,
        "reps": report.reps,
        "failures": report.failures,
        "bootstrap_reps": report.bootstrap_reps,
        "bootstrap_first": report.bootstrap_first,
        "eval_times": [float(t) for t in report.eval_times],
        "truth": {
            "f1": [float(v) for v in report.truth.f1],
            "f0": [float(v) for v in report.truth.f0],
            "provenance": report.truth.provenance,
        },
        "config": {"n": report.config.n, "seed": report.config.seed,
                   "truth_draws": report.config.truth_draws,
                   "truth_seed": report.config.truth_seed},
        "estimands": blocks,
    }


_ROW_ORDER = [("bias", "oracle"), ("bias", "adjusted"),
              ("sd", "oracle"), ("sd", "adjusted"),
              ("mean_se", "oracle"), ("mean_se", "naive"),
              ("mean_se", "corrected"), ("mean_se", "bootstrap"),
              ("coverage", "oracle"), ("coverage", "naive"),
              ("coverage", "corrected"), ("coverage", "bootstrap")]


def write_mc_tables(report: MCReport, out_dir) -> list:
    """CSV table per estimand (three decimals, methods as rows) + full JSON."""
    out_dir = Path(out_dir)
    written = []
    for label, block in report.estimands.items():
        path = out_dir / f"mc_{label}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "method"]
                       + [format(t, "g") for t in report.eval_times])
            for stat, method in _ROW_ORDER:
                vals = block.get(stat, {}).get(method)
                if vals is None:
                    continue
                w.writerow([stat, method] + [format(v, ".3f") for v in vals])
        written.append(path)
    json_path = out_dir / "mcreport.json"
    json_path.write_text(json.dumps(_mc_json_payload(report), sort_keys=True,
                                    indent=2) + "\n", encoding="utf-8")
    written.append(json_path)
    return written
