"""Executable algebraic identities linking the estimators.

The six-state progressive illness-death model (no HAI, HAI-free death,
HAI-free discharge, HAI, death after HAI, discharge after HAI) collapses to
the four-state competing-risk model used by the estimators.  The
re-weighted Schumacher estimator, the gamma identity of the weighted
Aalen-Johansen estimator and the weight decompositions all reduce to the
censoring estimator when weights are estimated nonparametrically.
:func:`run_checks` bundles these into a suite that can be run on any
dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cohort import Cohort, Event, LifeTable, TimeGrid, build_life_table
from .errors import DegenerateWeightError, MissingTerminalEventsError, NumericalError, ValidationError
from .estimators import (CurveKind, EstimateCurve, ccif_censoring, ccif_censoring_weighted,
                         ccif_competing, ccif_exclusion)
from .ipcw import ConditionalWeights, conditional_weights, weighted_aj
from .ledger import Scheme, decompose_weight, estimate_from_ledger, ledger

SIX_STATES = ("no_hai", "hai_free_death", "hai_free_discharge", "hai", "death_after_hai",
              "discharge_after_hai")
FOUR_STATES = ("no_hai", "hai_free_death", "hai_free_discharge", "hai")


@dataclass(frozen=True)
class StateOccupation:
    """``six[t, k] = P_0k(0, t)`` and ``four[t, k] = P'_0k(0, t)`` by direct counting."""

    grid: TimeGrid
    six: np.ndarray
    four: np.ndarray
    table: LifeTable = field(repr=False)


def occupation_six_state(cohort: Cohort) -> StateOccupation:
    """Empirical state occupation probabilities of both multistate models.

    The four-state probabilities are counted from ``(T~, eps~)`` alone and
    the six-state ones from the full record, so the collapse identity
    compares two independent computations.
    """
    if not cohort.has_full_followup:
        missing = [cohort.patient_ids[i] for i in np.flatnonzero(cohort.t_factual < 0)]
        raise MissingTerminalEventsError(
            f"six-state model needs post-infection follow-up; missing for {missing[0]}",
            patient_ids=missing)
    if cohort.n == 0:
        raise ValidationError("empty cohort")
    nd = cohort.grid.n_days
    days = cohort.grid.days[None, :]
    tt, et = cohort.t_tilde[:, None], cohort.eps_tilde[:, None]
    tf, ef = cohort.t_factual[:, None], cohort.eps_factual[:, None]
    n = cohort.n

    state6 = np.zeros((n, nd), dtype=np.int64)
    state6[(tt <= days) & (et == Event.DEATH)] = 1
    state6[(tt <= days) & (et == Event.DISCHARGE)] = 2
    post = (tt <= days) & (et == Event.INFECTION)
    state6[post] = 3
    state6[post & (tf <= days) & (ef == Event.DEATH)] = 4
    state6[post & (tf <= days) & (ef == Event.DISCHARGE)] = 5

    state4 = np.where(tt <= days, et, 0)
    six = np.stack([(state6 == k).sum(axis=0) for k in range(6)], axis=1) / n
    four = np.stack([(state4 == k).sum(axis=0) for k in range(4)], axis=1) / n
    return StateOccupation(cohort.grid, six, four, build_life_table(cohort))


@dataclass(frozen=True)
class IdentityResult:
    name: str
    max_violation: float
    tol: float
    worst_day: int | None = None
    note: str = ""
    skipped: bool = False

    @property
    def passed(self) -> bool:
        return self.skipped or (math.isfinite(self.max_violation) and self.max_violation <= self.tol)

    def as_dict(self) -> dict:
        return {"identity": self.name, "max_abs_violation": self.max_violation, "tolerance": self.tol,
                "worst_day": self.worst_day, "passed": self.passed, "skipped": self.skipped,
                "note": self.note}


def _compare(name, a, b, tol, note=""):
    a = np.asarray([float(v) for v in np.ravel(a)])
    b = np.asarray([float(v) for v in np.ravel(b)])
    if a.shape != b.shape:
        return IdentityResult(name, math.inf, tol, note="shape mismatch")
    if len(a) == 0:
        return IdentityResult(name, 0.0, tol, note=note)
    diff = np.abs(a - b)
    diff[np.isnan(a) & np.isnan(b)] = 0.0
    diff[np.isnan(diff)] = math.inf
    worst = int(np.argmax(diff))
    return IdentityResult(name, float(diff[worst]), tol, worst, note)


def _skip(name, tol, why):
    return IdentityResult(name, 0.0, tol, None, why, skipped=True)


def collapse_check(occ: StateOccupation, tol: float = 1e-12) -> list[IdentityResult]:
    """Collapse of the six-state model and the Schumacher ratio.

    Checks ``P'_03 = P_03 + P_04 + P_05``, ``P'_0k = P_0k`` for k in 0..2,
    row sums of 1, and ``P'_01 / (1 - P'_03)`` against the competing
    estimator.
    """
    six, four = occ.six, occ.four
    out = [
        _compare("collapse_hai_states", four[:, 3], six[:, 3:].sum(axis=1), tol),
        _compare("collapse_hai_free_states", four[:, :3], six[:, :3], tol),
        _compare("six_state_row_sums", six.sum(axis=1), np.ones(len(six)), tol),
        _compare("four_state_row_sums", four.sum(axis=1), np.ones(len(four)), tol),
    ]
    free = 1 - four[:, 3]
    if (free <= 0).any():
        out.append(_skip("schumacher_ratio_vs_competing", tol, "all patients infected by some day"))
    else:
        ratio = four[:, 1] / free
        out.append(_compare("schumacher_ratio_vs_competing", ratio, ccif_competing(occ.table).values, tol))
    return out


def _w_star_at(cohort: Cohort, weights: ConditionalWeights, day: int):
    """Zeroed weights on ``day``; patients beyond the horizon keep their day-J weight."""
    J = cohort.grid.horizon
    if day <= J:
        return weights.w_star[:, day]
    return weights.w_star[:, J]


def reweighted_schumacher(cohort: Cohort, weights: ConditionalWeights) -> tuple[EstimateCurve, np.ndarray]:
    """Schumacher ratio with numerator and denominator carrying the zeroed IPC weights.

    ``sum_{j<=t} d^{w*}_{j1} / (sum_{j<=t} d^{w*}_{j1} + sum_{j<=t} d^{w*}_{j2} + r^{w*}_{t+1})``.
    Returns the curve and the denominators.  On day J, ``r^{w*}_{J+1}`` is
    the weight of patients at risk past the horizon, who cannot be infected
    after it.
    """
    nd = cohort.grid.n_days
    tt, et = cohort.t_tilde, cohort.eps_tilde
    zero = Fraction(0) if weights.exact else 0.0
    num = den12 = zero
    vals, dens = [], []
    for t in range(nd):
        on = tt == t
        d1 = weights.w_star[on & (et == Event.DEATH), t].sum()
        d2 = weights.w_star[on & (et == Event.DISCHARGE), t].sum()
        num = num + d1
        den12 = den12 + d1 + d2
        r_next = _w_star_at(cohort, weights, t + 1)[tt >= t + 1].sum()
        den = den12 + r_next
        if den == 0:
            raise DegenerateWeightError(f"day {t}: re-weighted Schumacher denominator is zero", day=t)
        vals.append(num / den)
        dens.append(den)
    dtype = object if weights.exact else float
    return (EstimateCurve(cohort.grid, np.array(vals, dtype=dtype), CurveKind.CENSORING),
            np.array(dens, dtype=dtype))


def schumacher_denominator(table: LifeTable, t: int, exact: bool = False):
    """The re-weighted denominator written in life-table counts only.

    ``sum_{j<=t} (d~_j1 + d~_j2) / prod_{j'<=j} (1 - d~_j'3 / r~_j')
    + r~_{t+1} / prod_{j''<=t} (1 - d~_j''3 / r~_j'')``, which equals n.
    """
    d1, d2, d3, r = table.d(1), table.d(2), table.d(3), table.at_risk
    one = Fraction(1) if exact else 1.0
    surv = one
    total = 0 * one
    for j in range(t + 1):
        if d3[j]:
            if d3[j] == r[j]:
                raise DegenerateWeightError(f"day {j}: everyone at risk infected", day=j)
            surv = surv * (1 - (Fraction(int(d3[j]), int(r[j])) if exact else d3[j] / r[j]))
        total = total + (int(d1[j]) + int(d2[j])) / surv
    r_next = int(r[t + 1]) if t + 1 < len(r) else table.beyond_horizon
    return total + r_next / surv


def gamma(cohort: Cohort, weights: ConditionalWeights) -> np.ndarray:
    """``gamma_j = r^{w*}_j prod_{j'<j} (1 - d^{w*}_{j'} / r^{w*}_{j'})^-1``; all n for nonparametric weights.

    NaN from the first day on which the product vanishes (everyone still
    at risk has left).
    """
    tt = cohort.t_tilde
    one = Fraction(1) if weights.exact else 1.0
    surv = one
    out = []
    for j in range(cohort.grid.n_days):
        r = weights.w_star[tt >= j, j].sum()
        d = weights.w_star[tt == j, j].sum()
        if surv == 0:
            out.append(math.nan)
            continue
        out.append(r / surv)
        surv = 0 * one if r == 0 else surv * (1 - d / r)
    return np.array(out, dtype=object if weights.exact else float)


def _degenerate(weights: ConditionalWeights) -> bool:
    return any(v == math.inf for v in np.ravel(weights.w))


def weights_from_matrix(cohort: Cohort, w: np.ndarray) -> ConditionalWeights:
    """Wrap a user-supplied weight matrix ``w[i, j]`` (cells after ``min(T~, J)`` ignored)."""
    w = np.asarray(w)
    if w.shape != (cohort.n, cohort.grid.n_days):
        raise ValidationError(f"weight matrix has shape {w.shape}, expected {(cohort.n, cohort.grid.n_days)}")
    days = cohort.grid.days[None, :]
    at = days <= np.minimum(cohort.t_tilde, cohort.grid.horizon)[:, None]
    wf = np.where(at, w, 0)
    if w.dtype != object and (~np.isfinite(np.where(at, w, 0.0))).any():
        raise ValidationError("weights must be finite on at-risk days")
    if (wf < 0).any():
        raise ValidationError("weights must be nonnegative")
    onset = np.where(cohort.infected, cohort.t_tilde, cohort.grid.n_days + 1)
    ws = np.where(days < onset[:, None], wf, 0)
    return ConditionalWeights(cohort.grid, np.zeros(w.shape), wf, ws, "supplied")


def run_checks(cohort: Cohort, weights: ConditionalWeights | None = None, tol: float = 1e-9,
               exact: bool = False) -> list[IdentityResult]:
    """Run every identity applicable to ``cohort``.

    With ``weights`` the gamma and Schumacher identities are evaluated on
    the supplied weights instead of the nonparametric ones; they hold only
    if those weights are nonparametric (stratified) IPC weights.
    """
    out: list[IdentityResult] = []
    table = build_life_table(cohort)
    J = cohort.grid.horizon
    if cohort.n == 0:
        return [_skip("cohort", tol, "empty cohort")]
    if not cohort.onset_known:
        return [_skip("cohort", tol, "infection onset days unknown; only the exclusion estimator applies")]

    try:
        pl = ccif_censoring(table, exact)
        out.append(_compare("product_limit_vs_weighted_ecdf", pl.values,
                            ccif_censoring_weighted(table, exact).values, tol))
    except NumericalError as exc:
        pl = None
        out.append(_skip("product_limit_vs_weighted_ecdf", tol, str(exc)))

    try:
        worst = (0.0, None)
        for j in range(J + 1):
            dec = decompose_weight(table, j, exact)
            v = dec.max_discrepancy()
            if v > worst[0] or worst[1] is None:
                worst = (v, j)
        out.append(IdentityResult("weight_decompositions", worst[0], tol, worst[1]))
    except NumericalError as exc:
        out.append(_skip("weight_decompositions", tol, str(exc)))

    for scheme in Scheme:
        name = scheme.value
        try:
            book = ledger(cohort, scheme, exact)
        except NumericalError as exc:
            out.append(_skip(f"ledger_{name}", tol, str(exc)))
            continue
        out.append(_compare(f"ledger_conservation_{name}", book.column_totals(),
                            np.full(J + 1, cohort.n), tol))
        ref = {Scheme.CENSORING: ccif_censoring, Scheme.EXCLUSION: ccif_exclusion,
               Scheme.COMPETING: ccif_competing}[scheme]
        try:
            out.append(_compare(f"ledger_vs_estimator_{name}", estimate_from_ledger(book).values,
                                ref(table, exact).values, tol))
        except NumericalError as exc:
            out.append(_skip(f"ledger_vs_estimator_{name}", tol, str(exc)))

    try:
        npw = conditional_weights(cohort, exact=exact)
        aj = weighted_aj(cohort, npw)
        if pl is not None:
            out.append(_compare("ipcw_reduction", aj.values, pl.values, tol))
    except NumericalError as exc:
        npw = None
        out.append(_skip("ipcw_reduction", tol, str(exc)))

    try:
        dens = [schumacher_denominator(table, t, exact) for t in range(J + 1)]
        out.append(_compare("schumacher_denominator_counts", dens, np.full(J + 1, cohort.n), tol))
    except NumericalError as exc:
        out.append(_skip("schumacher_denominator_counts", tol, str(exc)))

    supplied = weights is not None
    w = weights if supplied else npw
    tag = "supplied" if supplied else "nonparametric"
    if w is not None and _degenerate(w):
        out.append(_skip(f"gamma_identity_{tag}", tol, "a hazard of 1 makes the weights degenerate"))
    elif w is not None:
        g = np.array([float(v) for v in gamma(cohort, w)])
        ok = ~np.isnan(g)
        out.append(_compare(f"gamma_identity_{tag}", g[ok], np.full(int(ok.sum()), cohort.n), tol,
                            note="" if ok.all() else f"undefined from day {int(np.argmin(ok))}"))
        try:
            curve, den = reweighted_schumacher(cohort, w)
            out.append(_compare(f"schumacher_denominator_{tag}", den, np.full(J + 1, cohort.n), tol))
            target = weighted_aj(cohort, w)
            out.append(_compare(f"reweighted_schumacher_vs_weighted_aj_{tag}", curve.values,
                                target.values, tol))
        except NumericalError as exc:
            out.append(_skip(f"reweighted_schumacher_{tag}", tol, str(exc)))

    if cohort.has_full_followup:
        out.extend(collapse_check(occupation_six_state(cohort), max(tol, 1e-12)))
    else:
        out.append(_skip("collapse", tol, "post-infection follow-up incomplete"))
    return out
