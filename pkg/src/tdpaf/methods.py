"""Method dispatch and per-method data requirements.

=============  ==============  =============  =================
method         infection day   covariates     individual data
=============  ==============  =============  =================
exclusion      no (status)     no             no
competing      yes             no             no (life table)
censoring      yes             no             no (life table)
ipcw           yes             yes            yes
=============  ==============  =============  =================
"""

from __future__ import annotations

from dataclasses import dataclass

from .cohort import Cohort, CovariateHistory, build_life_table, build_two_state_table
from .errors import MissingDataError, ValidationError
from .estimators import (EstimateCurve, ccif_censoring, ccif_competing, ccif_exclusion, factual_cif,
                         paf_curve)
from .ipcw import ipcw_estimate

METHODS = ("exclusion", "competing", "censoring", "ipcw")


def check_requirements(method: str, cohort: Cohort, covariates: CovariateHistory | None) -> None:
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method != "exclusion" and not cohort.onset_known:
        raise MissingDataError(
            f"method {method} needs infection onset days: add an infection_day column to patients.csv "
            "(or use --method exclusion, which needs only infection status)")
    if method == "ipcw" and (covariates is None or covariates.k == 0):
        raise MissingDataError("method ipcw needs covariate histories: pass --covariates covariates.csv "
                               "with header patient_id,day,<cov1>,...")


@dataclass(frozen=True)
class MethodSpec:
    """A counterfactual estimator with its options, callable on a (resampled) cohort."""

    method: str
    nonparametric: bool = False
    truncate: float | None = None

    def __call__(self, cohort: Cohort, covariates: CovariateHistory | None = None) -> EstimateCurve:
        return counterfactual_curve(self.method, cohort, covariates, nonparametric=self.nonparametric,
                                    truncate=self.truncate)


def counterfactual_curve(method: str, cohort: Cohort, covariates: CovariateHistory | None = None,
                         nonparametric: bool = False, truncate: float | None = None) -> EstimateCurve:
    check_requirements(method, cohort, covariates)
    if method == "ipcw":
        return ipcw_estimate(cohort, covariates, nonparametric=nonparametric, truncate=truncate).curve
    table = build_life_table(cohort)
    return {"exclusion": ccif_exclusion, "competing": ccif_competing, "censoring": ccif_censoring}[method](table)


def factual_or_none(cohort: Cohort) -> EstimateCurve | None:
    """Factual death CIF, or None when infected patients lack a terminal event."""
    if not cohort.has_full_followup:
        return None
    return factual_cif(build_two_state_table(cohort))


def paf_or_none(factual: EstimateCurve | None, ccif: EstimateCurve) -> EstimateCurve | None:
    return None if factual is None else paf_curve(factual, ccif)
