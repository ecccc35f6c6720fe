"""Factual and counterfactual cumulative incidence estimators.

All estimators take a :class:`~tdpaf.cohort.LifeTable` and return an
:class:`EstimateCurve` materialized on every day ``0..J``.  Pass
``exact=True`` to compute in rational arithmetic (values become
:class:`fractions.Fraction`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .cohort import LifeTable, TimeGrid
from .errors import DegenerateWeightError, EmptyRiskSetError, GridMismatchError, ValidationError


class CurveKind(str, enum.Enum):
    FACTUAL_CIF = "factual_cif"
    EXCLUSION = "ccif_exclusion"
    COMPETING = "ccif_competing"
    CENSORING = "ccif_censoring"
    IPCW = "ccif_ipcw"
    PAF = "paf"
    HAI_FREE = "hai_free_cif"
    TRUTH = "ccif_truth"


@dataclass(frozen=True)
class EstimateCurve:
    """Step function over days; ``values[t]`` is the estimate at landmark day t.

    For ``kind == PAF`` the value is NaN wherever the factual CIF is zero.
    """

    grid: TimeGrid
    values: np.ndarray
    kind: CurveKind
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.n_days,):
            raise ValidationError(f"curve has {v.shape} values, grid needs {self.grid.n_days}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", CurveKind(self.kind))

    @property
    def exact(self) -> bool:
        return self.values.dtype == object

    def floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.values], dtype=float)

    def with_ci(self, lower, upper) -> "EstimateCurve":
        return replace(self, ci_lower=np.asarray(lower, dtype=float), ci_upper=np.asarray(upper, dtype=float))

    def __getitem__(self, day):
        return self.values[day]


def _one(exact):
    return Fraction(1) if exact else 1.0


def _ratio(a, b, exact):
    return Fraction(int(a), int(b)) if exact else a / b


def _curve(grid, values, kind, exact):
    return EstimateCurve(grid, np.array(values, dtype=object if exact else float), kind)


def _check_three_state(table: LifeTable):
    if table.n_event_types != 3:
        raise ValidationError("expected a three-event (death, discharge, infection) life table")


def hai_free_ecdf(table: LifeTable, exact: bool = False) -> EstimateCurve:
    """``n^-1 sum_{j<=t} d~_{j1}``: cumulative incidence of HAI-free death."""
    n = table.n
    if n == 0:
        raise DegenerateWeightError("empty cohort")
    cum = np.cumsum(table.d(1))
    return _curve(table.grid, [_ratio(c, n, exact) for c in cum], CurveKind.HAI_FREE, exact)


def factual_cif(table: LifeTable, k: int = 1, exact: bool = False) -> EstimateCurve:
    """Aalen-Johansen cumulative incidence of event type ``k``.

    ``table`` is usually the two-state table from
    :func:`~tdpaf.cohort.build_two_state_table`.  With no censoring this is
    the empirical distribution of type-k event days.
    """
    if not 1 <= k <= table.n_event_types:
        raise ValidationError(f"event type {k} not in table")
    dk, dtot, r = table.d(k), table.total, table.at_risk
    surv = _one(exact)
    acc = 0 * surv
    out = []
    for j in range(table.grid.n_days):
        if r[j] > 0:
            acc = acc + surv * _ratio(dk[j], r[j], exact)
            surv = surv * (1 - _ratio(dtot[j], r[j], exact))
        out.append(acc)
    return _curve(table.grid, out, CurveKind.FACTUAL_CIF, exact)


def ccif_exclusion(table: LifeTable, exact: bool = False) -> EstimateCurve:
    """Counterfactual CIF treating infection as an exclusion criterion.

    HAI-free deaths are upweighted by the constant
    ``W = (1 - sum_{j<=J} d~_{j3} / n)^-1``, i.e. the deaths of never
    infected patients divided by the fraction never infected.
    """
    _check_three_state(table)
    n, m = table.n, int(table.d(3).sum())
    if m >= n:
        raise DegenerateWeightError(f"all {n} patients infected; exclusion weight undefined")
    w = _ratio(n, n - m, exact)
    cum = np.cumsum(table.d(1))
    return _curve(table.grid, [_ratio(c, n, exact) * w for c in cum], CurveKind.EXCLUSION, exact)


def competing_weights(table: LifeTable, exact: bool = False) -> np.ndarray:
    """Landmark weights ``W_t = (1 - sum_{j<=t} d~_{j3} / n)^-1`` (inf when undefined)."""
    _check_three_state(table)
    n = table.n
    out = []
    for c3 in np.cumsum(table.d(3)):
        out.append(math.inf if c3 >= n else _ratio(n, n - c3, exact))
    return np.array(out, dtype=object if exact else float)


def ccif_competing(table: LifeTable, exact: bool = False) -> EstimateCurve:
    """Counterfactual CIF treating infection as a competing event.

    All HAI-free deaths by landmark t are weighted by ``W_t``; equivalently
    ``P'_01(t) / (1 - P'_03(t))`` in the collapsed competing-risk model.
    """
    w = competing_weights(table, exact)
    n = table.n
    out = []
    for t, c1 in enumerate(np.cumsum(table.d(1))):
        if w[t] == math.inf:
            raise DegenerateWeightError(f"all patients infected by day {t}; competing weight undefined", day=t)
        out.append(_ratio(c1, n, exact) * w[t])
    return _curve(table.grid, out, CurveKind.COMPETING, exact)


def ccif_censoring(table: LifeTable, exact: bool = False) -> EstimateCurve:
    """Aalen-Johansen estimator with infection onset treated as censoring.

    Product-limit form: newly infected patients leave the risk set of day j
    before that day's deaths and discharges.
    """
    _check_three_state(table)
    d1, d3, dtot, r = table.d(1), table.d(3), table.total, table.at_risk
    surv = _one(exact)
    acc = 0 * surv
    out = []
    for j in range(table.grid.n_days):
        r_post = int(r[j] - d3[j])
        if r_post <= 0:
            if d1[j] > 0:
                raise EmptyRiskSetError(f"day {j}: empty risk set after censoring but {d1[j]} death(s)", day=j)
        else:
            acc = acc + surv * _ratio(d1[j], r_post, exact)
            surv = surv * (1 - _ratio(dtot[j] - d3[j], r_post, exact))
        out.append(acc)
    return _curve(table.grid, out, CurveKind.CENSORING, exact)


def censoring_weights(table: LifeTable, exact: bool = False) -> np.ndarray:
    """IPC weights ``W_j = prod_{j'<=j} (1 - d~_{j'3} / r~_{j'})^-1``.

    ``inf`` from the first day on which every patient at risk is infected.
    """
    _check_three_state(table)
    d3, r = table.d(3), table.at_risk
    w = _one(exact)
    out = []
    for j in range(table.grid.n_days):
        if w != math.inf and r[j] > 0 and d3[j] > 0:
            w = math.inf if d3[j] == r[j] else w / (1 - _ratio(d3[j], r[j], exact))
        out.append(w)
    return np.array(out, dtype=object if exact else float)


def ccif_censoring_weighted(table: LifeTable, exact: bool = False) -> EstimateCurve:
    """Same estimand as :func:`ccif_censoring`, as an IPC-weighted ECDF.

    ``n^-1 sum_{j<=t} d~_{j1} W_j``.
    """
    n = table.n
    if n == 0:
        raise DegenerateWeightError("empty cohort")
    w = censoring_weights(table, exact)
    d1 = table.d(1)
    acc = 0 * _one(exact)
    out = []
    for j in range(table.grid.n_days):
        if d1[j] > 0:
            if w[j] == math.inf:
                raise EmptyRiskSetError(f"day {j}: deaths after all at-risk patients were censored", day=j)
            acc = acc + _ratio(d1[j], n, exact) * w[j]
        out.append(acc)
    return _curve(table.grid, out, CurveKind.CENSORING, exact)


def paf_curve(factual: EstimateCurve, counterfactual: EstimateCurve) -> EstimateCurve:
    """Time-dependent PAF ``(F(t) - F0(t)) / F(t)``; NaN where ``F(t) = 0``.

    Negative values are returned unchanged.
    """
    if factual.grid != counterfactual.grid:
        raise GridMismatchError(
            f"grids differ: horizon {factual.grid.horizon} vs {counterfactual.grid.horizon}")
    if factual.kind != CurveKind.FACTUAL_CIF:
        raise ValidationError(f"first curve must be a factual CIF, got {factual.kind.value}")
    exact = factual.exact and counterfactual.exact
    out = []
    for f, c in zip(factual.values, counterfactual.values):
        out.append(math.nan if f == 0 else (f - c) / f)
    return EstimateCurve(factual.grid, np.array(out, dtype=object if exact else float), CurveKind.PAF)
