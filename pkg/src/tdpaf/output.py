"""CSV/JSON serialization.

All files are UTF-8 with LF line endings and ``.`` as decimal separator.
Numbers are written in the shortest form that round-trips to the same
double (integral values without a fraction part); NaN is written ``NA``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cohort import Cohort, CovariateHistory, Event
from .estimators import EstimateCurve
from .ledger import WeightLedger

NA = "NA"


def fmt(x) -> str:
    if x is None:
        return NA
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return NA
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v.is_integer() and abs(v) < 2 ** 53:
        return str(int(v))
    return repr(v)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _open(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="", encoding="utf-8")


def write_curves(path, ccif: EstimateCurve, factual: EstimateCurve | None = None,
                 paf: EstimateCurve | None = None) -> None:
    """``day,cif_factual,ccif,paf[,ci_lower,ci_upper]``; factual columns dropped when absent."""
    header = ["day"]
    cols = []
    if factual is not None:
        header.append("cif_factual")
        cols.append(factual.values)
    header.append("ccif")
    cols.append(ccif.values)
    if paf is not None:
        header.append("paf")
        cols.append(paf.values)
    if ccif.ci_lower is not None:
        header += ["ci_lower", "ci_upper"]
        cols += [ccif.ci_lower, ccif.ci_upper]
    with _open(path) as fh:
        w = _writer(fh)
        w.writerow(header)
        for day in range(ccif.grid.n_days):
            w.writerow([day] + [fmt(c[day]) for c in cols])


def write_ledger(weights_path, annotations_path, book: WeightLedger, summary_path=None,
                 ccif: EstimateCurve | None = None) -> None:
    header = ["patient_id"] + [f"day_{j}" for j in range(book.grid.n_days)]
    with _open(weights_path) as fh:
        w = _writer(fh)
        w.writerow(header)
        for pid, row in zip(book.patient_ids, book.weight):
            w.writerow([pid] + [fmt(v) for v in row])
    with _open(annotations_path) as fh:
        w = _writer(fh)
        w.writerow(header)
        for pid, row in zip(book.patient_ids, book.annotation):
            w.writerow([pid] + list(row))
    if summary_path is not None:
        with _open(summary_path) as fh:
            w = _writer(fh)
            w.writerow(["day", "recipients", "odds"] + (["ccif"] if ccif is not None else []))
            for j in range(book.grid.n_days):
                row = [j, int(book.risk_set[j]), fmt(book.transfer[j])]
                if ccif is not None:
                    row.append(fmt(ccif.values[j]))
                w.writerow(row)


def write_patients(path, cohort: Cohort) -> None:
    """``patients.csv`` plus the ``at_risk_beyond_horizon`` column."""
    with _open(path) as fh:
        w = _writer(fh)
        w.writerow(["patient_id", "infection_day", "terminal_day", "terminal_type", "at_risk_beyond_horizon"])
        J = cohort.grid.horizon
        names = {int(Event.DEATH): "death", int(Event.DISCHARGE): "discharge"}
        for i, pid in enumerate(cohort.patient_ids):
            C = int(cohort.t_tilde[i]) if cohort.eps_tilde[i] == Event.INFECTION else ""
            tf = int(cohort.t_factual[i])
            if 0 <= tf <= J:
                w.writerow([pid, C, tf, names[int(cohort.eps_factual[i])], 0])
            else:
                w.writerow([pid, C, "", "", int(tf > J)])


def write_covariates(path, cohort: Cohort, covariates: CovariateHistory) -> None:
    with _open(path) as fh:
        w = _writer(fh)
        w.writerow(["patient_id", "day"] + list(covariates.names))
        vals = covariates.values
        for i, pid in enumerate(cohort.patient_ids):
            for j in np.flatnonzero(~np.isnan(vals[i]).any(axis=1)):
                w.writerow([pid, int(j)] + [fmt(v) for v in vals[i, j]])


def write_truth(path, truth) -> None:
    with _open(path) as fh:
        w = _writer(fh)
        w.writerow(["day", "truth", "se"])
        for j, (v, s) in enumerate(zip(truth.values, truth.se)):
            w.writerow([j, fmt(v), fmt(s)])


def write_json(path, data) -> None:
    with _open(path) as fh:
        fh.write(json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default, allow_nan=False))
        fh.write("\n")


def _clean(o):
    """Non-finite floats become null."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, Fraction)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
