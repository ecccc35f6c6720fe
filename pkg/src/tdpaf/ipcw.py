"""Covariate-conditional inverse probability of censoring weighting.

Infection onset is treated as a censoring event whose day-j hazard
``Pr(C = j | T~ >= j, L_{j-1})`` is estimated either by a pooled
discrete-time logistic model fitted with Newton-Raphson, or
nonparametrically within strata of the (lagged) covariates.  The resulting
weights feed a weighted Aalen-Johansen estimator of the counterfactual
cumulative incidence of death.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cohort import Cohort, CovariateHistory, Event, TimeGrid
from .errors import (ConvergenceError, DegenerateCellError, EmptyRiskSetError, NoEventsError,
                     SeparationError, SingularInformationError, ValidationError)
from .estimators import CurveKind, EstimateCurve

SEPARATION_BOUND = 30.0


def expit(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class PersonDays:
    """One row per patient-day at risk of infection.

    ``x`` holds the intercept column followed by the covariates measured on
    the previous day.
    """

    patient: np.ndarray
    day: np.ndarray
    y: np.ndarray
    x: np.ndarray = field(repr=False)
    names: tuple

    @property
    def size(self) -> int:
        return len(self.y)


def expand_person_days(cohort: Cohort, covariates: CovariateHistory | None = None,
                       include_day0: bool = False) -> PersonDays:
    """Expand the cohort into person-days ``j = 1..min(T~_i, J)``.

    Day 0 is left out unless ``include_day0``: no infection can be observed
    at admission in cohorts without day-0 events, and including those rows
    would distort a model without day effects.
    """
    if covariates is None:
        covariates = CovariateHistory.empty(cohort)
    covariates.validate(cohort)
    first = 0 if include_day0 else 1
    infected = cohort.infected
    if not include_day0 and bool((infected & (cohort.t_tilde == 0)).any()):
        raise ValidationError("day-0 infections present; expand with include_day0=True")
    last = np.minimum(cohort.t_tilde, cohort.grid.horizon)
    counts = np.maximum(last - first + 1, 0)
    patient = np.repeat(np.arange(cohort.n), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    day = np.arange(len(patient)) - start + first
    y = (infected[patient] & (cohort.t_tilde[patient] == day)).astype(float)
    lag = covariates.lagged()
    x = np.column_stack([np.ones(len(patient)), lag[patient, day]]) if len(patient) else \
        np.zeros((0, covariates.k + 1))
    return PersonDays(patient, day, y, x, ("intercept",) + covariates.names)


def _canonical(x, y):
    """Row order that depends only on row contents."""
    if len(y) == 0:
        return np.arange(0)
    keys = [x[:, k] for k in range(x.shape[1] - 1, -1, -1)] + [y]
    return np.lexsort(keys[::-1])


def _loglik(eta, y):
    # sum y*eta - log(1 + e^eta), stable for large |eta|
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _gradient(x, y, p):
    return x.T @ (y - p)


@dataclass(frozen=True)
class HazardModelFit:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    converged: bool
    iterations: int
    grad_max: float
    loglik: float
    hazards: np.ndarray = field(repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return expit(np.asarray(x, dtype=float) @ self.coef)

    def report(self) -> dict:
        return {
            "coefficients": dict(zip(self.names, map(float, self.coef))),
            "standard_errors": dict(zip(self.names, map(float, self.se))),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_max_norm": self.grad_max,
            "log_likelihood": self.loglik,
        }


def fit_discrete_hazard(person_days: PersonDays, max_iter: int = 100, tol: float = 1e-10,
                        max_halvings: int = 20) -> HazardModelFit:
    """Maximum-likelihood pooled logistic model for the daily infection hazard.

    Newton-Raphson from ``beta = 0``; a step is halved (up to
    ``max_halvings`` times) while it lowers the log-likelihood.  Converged
    when the gradient max-norm is at most ``tol``.

    Raises
    ------
    NoEventsError
        No infection among the person-days.
    SingularInformationError
        Design matrix is rank deficient.
    SeparationError
        A coefficient exceeds 30 in magnitude before the gradient vanishes.
    """
    y, x = person_days.y, person_days.x
    if y.sum() == 0:
        raise NoEventsError("no infections among person-days; hazard model cannot be fitted")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularInformationError(f"design matrix ({', '.join(person_days.names)}) is rank deficient")
    order = _canonical(x, y)
    xs, ys = x[order], y[order]

    beta = np.zeros(x.shape[1])
    eta = xs @ beta
    ll = _loglik(eta, ys)
    p = expit(eta)
    grad = _gradient(xs, ys, p)
    it = 0
    converged = False
    while True:
        gmax = float(np.max(np.abs(grad)))
        if gmax <= tol:
            converged = True
            break
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            worst = int(np.argmax(np.abs(beta)))
            raise SeparationError(
                f"coefficient {person_days.names[worst]} = {beta[worst]:.3g} diverging "
                f"(gradient max-norm {gmax:.3g}); perfect or quasi-perfect separation")
        if it >= max_iter:
            break
        info = (xs * (p * (1 - p))[:, None]).T @ xs
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularInformationError("observed information is singular") from None
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = beta + scale * step
            eta_c = xs @ cand
            ll_c = _loglik(eta_c, ys)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            scale *= 0.5
        beta, eta, ll = cand, eta_c, ll_c
        p = expit(eta)
        grad = _gradient(xs, ys, p)
        it += 1

    if not converged:
        raise ConvergenceError(f"Newton-Raphson did not converge in {max_iter} iterations "
                               f"(gradient max-norm {gmax:.3g})")
    info = (xs * (p * (1 - p))[:, None]).T @ xs
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("observed information is singular at the optimum") from None
    hazards = expit(x @ beta)
    if ((hazards <= 0) | (hazards >= 1)).any():
        raise SeparationError("fitted hazards reach 0 or 1")
    return HazardModelFit(person_days.names, beta, np.sqrt(np.diag(cov)), converged, it, gmax, ll, hazards)


@dataclass(frozen=True)
class GradientReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    worst: int
    name: str
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.rel_error[self.worst] <= self.tol)

    def __str__(self):
        status = "ok" if self.ok else "MISMATCH"
        return (f"gradient check {status}: worst coordinate {self.name} analytic={self.analytic[self.worst]:.10g} "
                f"numeric={self.numeric[self.worst]:.10g} rel.err={self.rel_error[self.worst]:.3g}")


def log_likelihood(beta, person_days: PersonDays) -> float:
    return _loglik(person_days.x @ np.asarray(beta, dtype=float), person_days.y)


def score(beta, person_days: PersonDays) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    return _gradient(person_days.x, person_days.y, expit(person_days.x @ beta))


def gradient_check(beta, person_days: PersonDays, tol: float = 1e-5) -> GradientReport:
    """Compare the analytic score with central finite differences.

    ``beta`` is a coefficient vector or a :class:`HazardModelFit`.  The
    step for coordinate k is ``1e-6 * (1 + |beta_k|)``.  The relative error
    is taken against ``max(|analytic|, |numeric|, 1)`` so that a vanishing
    gradient at the optimum is compared on an absolute scale.
    """
    if isinstance(beta, HazardModelFit):
        beta = beta.coef
    beta = np.asarray(beta, dtype=float)
    analytic = score(beta, person_days)
    numeric = np.empty_like(beta)
    for k in range(len(beta)):
        h = 1e-6 * (1 + abs(beta[k]))
        up, dn = beta.copy(), beta.copy()
        up[k] += h
        dn[k] -= h
        numeric[k] = (log_likelihood(up, person_days) - log_likelihood(dn, person_days)) / (2 * h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / scale
    worst = int(np.argmax(rel))
    return GradientReport(analytic, numeric, rel, worst, person_days.names[worst], tol)


@dataclass(frozen=True)
class ConditionalWeights:
    """Per patient-day hazards and IPC weights.

    ``w[i, j] = prod_{j'<=j} 1 / (1 - h[i, j'])`` and ``w_star`` is ``w``
    zeroed from the patient's own infection day on.  Cells after
    ``min(T~_i, J)`` are 0.  ``w`` is ``inf`` on an infection day whose
    hazard estimate is 1 (such cells never enter an estimator).
    """

    grid: TimeGrid
    hazard: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    w_star: np.ndarray = field(repr=False)
    mode: str = "nonparametric"

    @property
    def exact(self) -> bool:
        return self.w.dtype == object


def _at_risk_mask(cohort: Cohort) -> np.ndarray:
    return cohort.grid.days[None, :] <= np.minimum(cohort.t_tilde, cohort.grid.horizon)[:, None]


def nonparametric_hazards(cohort: Cohort, covariates: CovariateHistory | None = None,
                          exact: bool = False) -> np.ndarray:
    """Stratified hazards: infections over patients at risk in the same day and stratum.

    The stratum of patient i on day j is the vector of covariate values
    recorded on day ``j - 1`` (day 0 for j = 0).  With no covariates there
    is a single stratum and the hazards are ``d~_{j3} / r~_j``.
    """
    if covariates is None:
        covariates = CovariateHistory.empty(cohort)
    covariates.validate(cohort)
    n, nd = cohort.n, cohort.grid.n_days
    zero = Fraction(0) if exact else 0.0
    h = np.full((n, nd), zero, dtype=object if exact else float)
    lag = covariates.lagged()
    infected = cohort.infected
    for j in range(nd):
        at = np.flatnonzero(cohort.t_tilde >= j)
        if len(at) == 0:
            continue
        inf_today = infected[at] & (cohort.t_tilde[at] == j)
        if covariates.k:
            _, group = np.unique(lag[at, j], axis=0, return_inverse=True)
            group = group.reshape(-1)
        else:
            group = np.zeros(len(at), dtype=np.int64)
        size = np.bincount(group)
        events = np.bincount(group, weights=inf_today.astype(float)).astype(np.int64)
        if exact:
            h[at, j] = [Fraction(int(events[g]), int(size[g])) for g in group]
        else:
            h[at, j] = events[group] / size[group]
    return h


def model_hazards(cohort: Cohort, fit: HazardModelFit, covariates: CovariateHistory | None = None,
                  include_day0: bool = False) -> np.ndarray:
    """Fitted hazards on every at-risk patient-day (0 on day 0 unless modelled)."""
    if covariates is None:
        covariates = CovariateHistory.empty(cohort)
    if covariates.names != tuple(fit.names[1:]):
        raise ValidationError(f"model covariates {fit.names[1:]} differ from {covariates.names}")
    covariates.validate(cohort)
    lag = covariates.lagged()
    n, nd = cohort.n, cohort.grid.n_days
    x = np.concatenate([np.ones((n, nd, 1)), lag], axis=2)
    x = np.nan_to_num(x)
    h = expit(x.reshape(-1, x.shape[2]) @ fit.coef).reshape(n, nd)
    h[~_at_risk_mask(cohort)] = 0.0
    if not include_day0:
        h[:, 0] = 0.0
    return h


def conditional_weights(cohort: Cohort, fit: HazardModelFit | None = None,
                        covariates: CovariateHistory | None = None, exact: bool = False,
                        truncate: float | None = None, include_day0: bool = False) -> ConditionalWeights:
    """IPC weights from a fitted hazard model, or stratified nonparametric hazards.

    ``truncate`` (a percentile in (0, 100]) clips the weights of at-risk
    cells from above; off by default.
    """
    if fit is None:
        h = nonparametric_hazards(cohort, covariates, exact)
        mode = "nonparametric"
    else:
        if exact:
            raise ValidationError("exact arithmetic is only available for nonparametric weights")
        h = model_hazards(cohort, fit, covariates, include_day0)
        mode = "model"
    at = _at_risk_mask(cohort)
    n, nd = h.shape
    infected = cohort.infected
    onset = np.where(infected, cohort.t_tilde, nd + 1)
    one = Fraction(1) if exact else 1.0
    dtype = object if exact else float
    w = np.zeros((n, nd), dtype=dtype)
    ws = np.zeros((n, nd), dtype=dtype)
    cur = np.full(n, one, dtype=dtype)
    alive = np.ones(n, dtype=bool)  # still carrying finite weight
    for j in range(nd):
        rows = np.flatnonzero(at[:, j])
        hj = h[rows, j]
        full = np.array([v >= 1 for v in hj], dtype=bool)
        if full.any():
            bad = rows[full & (onset[rows] != j)]
            if len(bad):
                raise DegenerateCellError(
                    f"day {j}: hazard 1 for patient {cohort.patient_ids[bad[0]]} who remains uninfected",
                    day=j, patient_id=cohort.patient_ids[bad[0]])
            alive[rows[full]] = False
        ok = rows[~full]
        cur[ok] = cur[ok] / (1 - h[ok, j])
        w[ok, j] = cur[ok]
        w[rows[full], j] = math.inf
        keep = rows[onset[rows] > j]
        ws[keep, j] = w[keep, j]
    if truncate is not None:
        if exact:
            raise ValidationError("weight truncation is not available in exact arithmetic")
        if not 0 < truncate <= 100:
            raise ValidationError("truncation percentile must lie in (0, 100]")
        finite = at & np.isfinite(w)
        cap = np.percentile(w[finite], truncate)
        w = np.where(finite, np.minimum(w, cap), w)
        ws = np.minimum(ws, cap)
    return ConditionalWeights(cohort.grid, h, w, ws, mode)


@dataclass(frozen=True)
class WeightedLifeTable:
    """Weighted counts ``d[j, k-1]`` and risk sets.

    ``at_risk[j]`` weights patients with ``T~ >= j`` by ``w``;
    ``at_risk_star`` uses ``w_star`` and equals ``at_risk - d[:, 2]``.
    """

    grid: TimeGrid
    events: np.ndarray
    at_risk: np.ndarray
    at_risk_star: np.ndarray


def _colsum(a, mask):
    return np.where(mask, a, 0).sum(axis=0)


def weighted_life_table(cohort: Cohort, weights: ConditionalWeights) -> WeightedLifeTable:
    at = _at_risk_mask(cohort)
    nd = cohort.grid.n_days
    days = cohort.grid.days[None, :]
    on_day = cohort.t_tilde[:, None] == days
    cols = []
    for k in (Event.DEATH, Event.DISCHARGE, Event.INFECTION):
        mask = on_day & (cohort.eps_tilde[:, None] == k)
        cols.append(_colsum(weights.w, mask))
    events = np.stack(cols, axis=1)
    if events.shape != (nd, 3):
        events = events.reshape(nd, 3)
    return WeightedLifeTable(cohort.grid, events, _colsum(weights.w, at), _colsum(weights.w_star, at))


def weighted_aj(cohort: Cohort, weights: ConditionalWeights) -> EstimateCurve:
    """Weighted Aalen-Johansen estimate of the counterfactual death CIF.

    ``sum_{j<=t} d^w_{j1} / (r^w_j - d^w_{j3})
    * prod_{j'<j} (1 - (d^w_{j'} - d^w_{j'3}) / (r^w_{j'} - d^w_{j'3}))``,
    with ``r^w_j - d^w_{j3}`` evaluated as the zeroed-weight risk set.
    """
    if weights.grid != cohort.grid:
        raise ValidationError("weights and cohort use different grids")
    wt = weighted_life_table(cohort, weights)
    one = Fraction(1) if weights.exact else 1.0
    surv, acc = one, 0 * one
    out = []
    for j in range(cohort.grid.n_days):
        d1, d2 = wt.events[j, 0], wt.events[j, 1]
        r = wt.at_risk_star[j]
        if r == 0:
            if d1 > 0:
                raise EmptyRiskSetError(f"day {j}: weighted risk set is empty but deaths occur", day=j)
        else:
            acc = acc + surv * d1 / r
            surv = surv * (1 - (d1 + d2) / r)
        out.append(acc)
    return EstimateCurve(cohort.grid, np.array(out, dtype=object if weights.exact else float), CurveKind.IPCW)


def weighted_ecdf(cohort: Cohort, weights: ConditionalWeights) -> EstimateCurve:
    """``n^-1 sum_{j<=t} d^w_{j1}``: the IPC-weighted empirical CIF of HAI-free death."""
    wt = weighted_life_table(cohort, weights)
    n = cohort.n
    acc = 0 * (Fraction(1) if weights.exact else 1.0)
    out = []
    for j in range(cohort.grid.n_days):
        acc = acc + wt.events[j, 0]
        out.append(acc / n)
    return EstimateCurve(cohort.grid, np.array(out, dtype=object if weights.exact else float), CurveKind.IPCW)


@dataclass(frozen=True)
class IPCWResult:
    curve: EstimateCurve
    weights: ConditionalWeights
    fit: HazardModelFit | None


def ipcw_estimate(cohort: Cohort, covariates: CovariateHistory | None = None,
                  nonparametric: bool = False, exact: bool = False,
                  truncate: float | None = None) -> IPCWResult:
    """Fit the censoring model (unless ``nonparametric``) and return the weighted AJ curve."""
    if not cohort.onset_known:
        raise ValidationError("ipcw needs infection onset days")
    if nonparametric:
        weights = conditional_weights(cohort, None, covariates, exact=exact, truncate=truncate)
        return IPCWResult(weighted_aj(cohort, weights), weights, None)
    include_day0 = bool((cohort.infected & (cohort.t_tilde == 0)).any())
    pdays = expand_person_days(cohort, covariates, include_day0=include_day0)
    fit = fit_discrete_hazard(pdays)
    weights = conditional_weights(cohort, fit, covariates, truncate=truncate, include_day0=include_day0)
    return IPCWResult(weighted_aj(cohort, weights), weights, fit)
