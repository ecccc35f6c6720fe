"""Patient-level nonparametric bootstrap with percentile intervals."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cohort import Cohort, CovariateHistory
from .errors import BootstrapFailureError, NumericalError, ValidationError
from .estimators import EstimateCurve
from .methods import MethodSpec

MAX_FAILED_FRACTION = 0.2


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 500
    seed: int = 0
    level: float = 0.95
    workers: int = 1

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 2:
            raise ValidationError(f"bootstrap needs at least 2 replicates, got {self.replicates!r}")
        if not 0 < self.level < 1:
            raise ValidationError(f"level must lie in (0, 1), got {self.level!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass(frozen=True)
class BootstrapResult:
    curve: EstimateCurve
    replicates: np.ndarray
    failed: tuple
    config: BootstrapConfig

    @property
    def se(self) -> np.ndarray:
        return self.replicates.std(axis=0, ddof=1)

    @property
    def n_failed(self) -> int:
        return len(self.failed)


def resample_indices(n: int, config: BootstrapConfig) -> list[np.ndarray]:
    """Per-replicate index vectors; replicate b uses the b-th child of the master seed."""
    children = np.random.SeedSequence(config.seed).spawn(config.replicates)
    return [np.random.Generator(np.random.Philox(ss)).integers(0, n, n) for ss in children]


def bootstrap_ci(cohort: Cohort, estimator: Callable | str, config: BootstrapConfig = BootstrapConfig(),
                 covariates: CovariateHistory | None = None) -> BootstrapResult:
    """Percentile bootstrap band around ``estimator(cohort, covariates)``.

    ``estimator`` is a method name or a callable returning an
    :class:`EstimateCurve`; the full pipeline (including any hazard-model
    refit) runs on every resample.  Replicates raising a numerical error
    are left out and listed in ``failed``.

    Raises
    ------
    BootstrapFailureError
        More than 20% of the replicates failed.
    """
    if isinstance(estimator, str):
        estimator = MethodSpec(estimator)
    point = estimator(cohort, covariates)
    if cohort.n == 0:
        raise ValidationError("cannot bootstrap an empty cohort")
    draws = resample_indices(cohort.n, config)

    def one(b):
        idx = draws[b]
        try:
            cov = None if covariates is None else covariates.take(idx)
            return b, estimator(cohort.take(idx), cov).floats(), None
        except NumericalError as exc:
            return b, None, str(exc)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, range(config.replicates)))
    else:
        results = [one(b) for b in range(config.replicates)]
    results.sort(key=lambda r: r[0])
    failed = tuple((b, msg) for b, _, msg in results if msg is not None)
    if len(failed) > MAX_FAILED_FRACTION * config.replicates:
        raise BootstrapFailureError(
            f"{len(failed)} of {config.replicates} bootstrap replicates failed (first: {failed[0][1]})",
            failed=len(failed))
    reps = np.array([v for _, v, msg in results if msg is None])
    alpha = 1 - config.level
    lower, upper = np.quantile(reps, [alpha / 2, 1 - alpha / 2], axis=0)
    return BootstrapResult(point.with_ci(lower, upper), reps, failed, config)
