"""Time-dependent population-attributable fractions for a time-varying exposure.

Discrete-time competing-risk estimators of the counterfactual cumulative
incidence of hospital death had hospital-acquired infection (HAI) been
eliminated, with their weight-transfer ledgers, algebraic cross-checks, a
confounded-cohort simulator and bootstrap intervals.
"""

from .cohort import (Cohort, CovariateHistory, Event, LifeTable, ObservedThreeState, PatientRecord,
                     TimeGrid, build_life_table, build_two_state_table, derive_observed,
                     ingest_covariates_csv, ingest_patients_csv, load_cohort)
from .errors import NumericalError, TdpafError, ValidationError
from .estimators import (CurveKind, EstimateCurve, ccif_censoring, ccif_censoring_weighted,
                         ccif_competing, ccif_exclusion, factual_cif, paf_curve)

__version__ = "0.1.0"

__all__ = [
    "Cohort", "CovariateHistory", "CurveKind", "EstimateCurve", "Event", "LifeTable",
    "NumericalError", "ObservedThreeState", "PatientRecord", "TdpafError", "TimeGrid",
    "ValidationError", "build_life_table", "build_two_state_table", "ccif_censoring",
    "ccif_censoring_weighted", "ccif_competing", "ccif_exclusion", "derive_observed",
    "factual_cif", "ingest_covariates_csv", "ingest_patients_csv", "load_cohort", "paf_curve",
]
