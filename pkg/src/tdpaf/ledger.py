"""Per-patient, per-day weight-transfer bookkeeping.

Each counterfactual estimator can be read as a scheme in which infected
patients hand their accumulated analysis weight to uninfected patients.
:func:`ledger` replays those transfers patient by patient, which gives an
audit trail and an estimation path independent of the closed-form
estimators in :mod:`tdpaf.estimators`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cohort import Cohort, Event, LifeTable, TimeGrid
from .errors import DegenerateWeightError, ValidationError
from .estimators import CurveKind, EstimateCurve

EXACT_LIMIT = 10_000


class Scheme(str, enum.Enum):
    CENSORING = "censoring"
    EXCLUSION = "exclusion"
    COMPETING = "competing"


class CellState(str, enum.Enum):
    AT_RISK = "at-risk"
    DEAD = "dead-uninfected"
    DISCHARGED = "discharged-uninfected"
    INFECTED = "censored-infected"


_STATE_OF_EVENT = {Event.DEATH: CellState.DEAD, Event.DISCHARGE: CellState.DISCHARGED,
                   Event.INFECTION: CellState.INFECTED}


@dataclass(frozen=True)
class WeightLedger:
    """Weight matrix ``weight[patient, day]`` with cell annotations.

    ``transfer`` holds the per-day odds that drive the transfers: the
    conditional odds of infection in the post-exclusion risk set
    (censoring), the constant marginal odds of ever being infected
    (exclusion), or the marginal odds of infection by day t (competing).
    ``risk_set`` is the number of patients receiving weight on each day.
    """

    scheme: Scheme
    grid: TimeGrid
    patient_ids: tuple
    weight: np.ndarray = field(repr=False)
    annotation: np.ndarray = field(repr=False)
    transfer: np.ndarray = field(repr=False)
    risk_set: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.patient_ids)

    @property
    def exact(self) -> bool:
        return self.weight.dtype == object

    def column_totals(self) -> np.ndarray:
        return self.weight.sum(axis=0)


def _annotations(cohort: Cohort) -> np.ndarray:
    days = cohort.grid.days[None, :]
    ann = np.full((cohort.n, cohort.grid.n_days), CellState.AT_RISK.value, dtype=object)
    for e, state in _STATE_OF_EVENT.items():
        mask = (cohort.eps_tilde[:, None] == e) & (cohort.t_tilde[:, None] <= days)
        ann[mask] = state.value
    return ann


def ledger(cohort: Cohort, scheme, exact: bool | None = None) -> WeightLedger:
    """Replay the weight transfers of ``scheme`` on ``cohort``.

    censoring
        On each infection day j the infected patients pool their weight and
        split it equally over the patients still at risk once they are
        removed; weights of patients who died or were discharged stay frozen.
    exclusion
        Every eventually infected patient hands its unit weight to the never
        infected patients on day 0.
    competing
        On each infection day the pooled weight goes to every patient not
        yet infected, including those already dead or discharged.

    Rational arithmetic is used by default for cohorts up to 10,000
    patients.
    """
    scheme = Scheme(scheme)
    if exact is None:
        exact = cohort.n <= EXACT_LIMIT
    if not cohort.onset_known and scheme != Scheme.EXCLUSION:
        raise ValidationError(f"scheme {scheme.value} needs infection onset days")
    n, J = cohort.n, cohort.grid.horizon
    zero, one = (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)
    t, eps = cohort.t_tilde, cohort.eps_tilde
    infected = eps == Event.INFECTION
    w = np.full(n, one, dtype=object if exact else float)
    weight = np.empty((n, J + 1), dtype=w.dtype)
    transfer = np.empty(J + 1, dtype=w.dtype)
    risk = np.zeros(J + 1, dtype=np.int64)

    if n == 0:
        weight[:] = 0
    elif scheme == Scheme.EXCLUSION:
        m = int(infected.sum())
        if m >= n:
            raise DegenerateWeightError(f"all {n} patients infected; exclusion weight undefined")
        share = Fraction(m, n - m) if exact else m / (n - m)
        w[~infected] = w[~infected] + share
        w[infected] = zero
        weight[:] = w[:, None]
        transfer[:] = share
        risk[:] = n - m
    else:
        for j in range(J + 1):
            today = infected & (t == j)
            if scheme == Scheme.CENSORING:
                recipients = (t >= j) & ~today
            else:
                recipients = ~(infected & (t <= j))
            k = int(recipients.sum())
            risk[j] = k
            if today.any():
                if k == 0:
                    raise DegenerateWeightError(
                        f"day {j}: no patient left to receive the weight of {int(today.sum())} infected",
                        day=j)
                pool = w[today].sum()
                w[recipients] = w[recipients] + pool / k
                w[today] = zero
            if scheme == Scheme.CENSORING:
                c = int(today.sum())
            else:
                c = int((infected & (t <= j)).sum())
            transfer[j] = zero if c == 0 else (Fraction(c, k) if exact else c / k)
            weight[:, j] = w
    return WeightLedger(scheme, cohort.grid, cohort.patient_ids, weight, _annotations(cohort),
                        transfer, risk)


def estimate_from_ledger(book: WeightLedger, table: LifeTable | None = None) -> EstimateCurve:
    """Counterfactual CIF read off the ledger.

    Censoring and exclusion count each HAI-free death with the weight it
    carried on its death day; the competing scheme counts every death by
    landmark t with the weight it carries on day t.
    """
    n = book.n
    if table is not None and table.n != n:
        raise ValidationError("ledger and life table come from different cohorts")
    if n == 0:
        raise DegenerateWeightError("empty cohort")
    died = book.annotation == CellState.DEAD.value
    ever = died.any(axis=1)
    death_day = np.where(ever, died.argmax(axis=1), book.grid.n_days)
    kind = {Scheme.CENSORING: CurveKind.CENSORING, Scheme.EXCLUSION: CurveKind.EXCLUSION,
            Scheme.COMPETING: CurveKind.COMPETING}[book.scheme]
    out = []
    for day in range(book.grid.n_days):
        sel = np.flatnonzero(death_day <= day)
        if book.scheme == Scheme.COMPETING:
            total = book.weight[sel, day].sum()
        else:
            total = book.weight[sel, death_day[sel]].sum()
        total = total if len(sel) else (Fraction(0) if book.exact else 0.0)
        out.append(total / n)
    return EstimateCurve(book.grid, np.array(out, dtype=book.weight.dtype), kind)


@dataclass(frozen=True)
class Summand:
    day: int
    direct: object  # odds of infection transferred on this day
    factor: object  # amplification of the direct term
    value: object


@dataclass(frozen=True)
class WeightDecomposition:
    """Three evaluations of the censoring weight on one day.

    ``backward`` itemizes weight accumulated by each censored patient before
    it is transferred; ``forward`` itemizes weight each transfer carries to
    later days.  Both sum to ``product - 1``.
    """

    day: int
    product: object
    backward: object
    forward: object
    backward_terms: tuple
    forward_terms: tuple

    def max_discrepancy(self) -> float:
        return max(abs(float(self.product - self.backward)), abs(float(self.product - self.forward)))


def decompose_weight(table: LifeTable, j: int, exact: bool = False) -> WeightDecomposition:
    """Evaluate the censoring weight on day ``j`` three ways.

    ``h_j = d~_{j3} / r~_j`` is the nonparametric hazard of infection and
    ``o_j = h_j / (1 - h_j)`` the odds directly transferred on day j.
    """
    if not 0 <= j <= table.grid.horizon:
        raise ValidationError(f"day {j} outside grid")
    d3, r = table.d(3), table.at_risk
    one = Fraction(1) if exact else 1.0
    hazard, odds = [], []
    for jj in range(j + 1):
        if r[jj] == 0 or d3[jj] == 0:
            h = 0 * one
        elif d3[jj] == r[jj]:
            raise DegenerateWeightError(f"day {jj}: every patient at risk infected; weight undefined", day=jj)
        else:
            h = Fraction(int(d3[jj]), int(r[jj])) if exact else d3[jj] / r[jj]
        hazard.append(h)
        odds.append(h / (1 - h))

    product = one
    for h in hazard:
        product = product / (1 - h)

    back_terms, fwd_terms = [], []
    for jj in range(j + 1):
        if odds[jj] == 0:
            continue
        fb = one
        for k in range(jj):
            fb = fb * (1 + odds[k])
        ff = one
        for k in range(jj + 1, j + 1):
            ff = ff * (1 + odds[k])
        back_terms.append(Summand(jj, odds[jj], fb, odds[jj] * fb))
        fwd_terms.append(Summand(jj, odds[jj], ff, odds[jj] * ff))
    backward = one + sum((s.value for s in back_terms), 0 * one)
    forward = one + sum((s.value for s in fwd_terms), 0 * one)
    return WeightDecomposition(j, product, backward, forward, tuple(back_terms), tuple(fwd_terms))
