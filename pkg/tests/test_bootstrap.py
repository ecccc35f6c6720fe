import numpy as np
import pytest
from numpy.testing import assert_array_equal

from tdpaf import Cohort, PatientRecord, TimeGrid, build_life_table, ccif_censoring
from tdpaf.bootstrap import BootstrapConfig, bootstrap_ci, resample_indices
from tdpaf.errors import BootstrapFailureError, MissingDataError, NumericalError, ValidationError
from tdpaf.estimators import CurveKind, EstimateCurve
from tdpaf.methods import METHODS, MethodSpec, check_requirements, counterfactual_curve
from tdpaf.simulate import scenario, simulate_cohort

from conftest import D


class TestConfig:
    @pytest.mark.parametrize("kw", [{"replicates": 1}, {"level": 1.0}, {"seed": -1}, {"workers": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            BootstrapConfig(**kw)

    def test_indices_reproducible(self):
        cfg = BootstrapConfig(replicates=5, seed=3)
        a, b = resample_indices(10, cfg), resample_indices(10, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert all(((x >= 0) & (x < 10)).all() for x in a)
        assert not np.array_equal(a[0], a[1])


class TestBootstrap:
    def test_identical_patients_zero_width(self):
        recs = [PatientRecord(f"p{i}", None, 2, D) for i in range(20)]
        c = Cohort.from_records(recs, TimeGrid(3))
        res = bootstrap_ci(c, "censoring", BootstrapConfig(replicates=20, seed=1))
        assert_array_equal(res.curve.ci_lower, res.curve.ci_upper)
        assert_array_equal(res.curve.ci_lower, [0, 0, 1, 1])

    def test_point_estimate_unaffected(self, toy):
        res = bootstrap_ci(toy, "censoring", BootstrapConfig(replicates=30, seed=2))
        assert list(res.curve.values) == list(ccif_censoring(build_life_table(toy)).values)
        assert (res.curve.ci_lower <= res.curve.ci_upper).all()

    def test_workers_do_not_matter(self):
        sim = simulate_cohort(scenario("confounded", n=800, seed=4))
        cfg = BootstrapConfig(replicates=12, seed=9)
        a = bootstrap_ci(sim.cohort, "ipcw", cfg, sim.covariates)
        b = bootstrap_ci(sim.cohort, "ipcw", BootstrapConfig(replicates=12, seed=9, workers=4), sim.covariates)
        assert_array_equal(a.replicates, b.replicates)
        assert_array_equal(a.curve.ci_upper, b.curve.ci_upper)

    def test_failed_replicates_recorded(self, toy):
        calls = {"n": 0}

        def flaky(cohort, cov):
            calls["n"] += 1
            if calls["n"] in (3, 5):
                raise NumericalError("boom")
            return ccif_censoring(build_life_table(cohort))

        res = bootstrap_ci(toy, flaky, BootstrapConfig(replicates=10, seed=0))
        assert res.n_failed == 2 and res.replicates.shape == (8, 7)

    def test_too_many_failures(self, toy):
        def bad(cohort, cov):
            if cohort.patient_ids != tuple("ABCDEF"):
                raise NumericalError("boom")
            return ccif_censoring(build_life_table(cohort))

        with pytest.raises(BootstrapFailureError, match="10 of 10"):
            bootstrap_ci(toy, bad, BootstrapConfig(replicates=10))

    def test_se(self, toy):
        res = bootstrap_ci(toy, "exclusion", BootstrapConfig(replicates=50, seed=5))
        assert res.se.shape == (7,) and res.se[0] == 0 and res.se[-1] > 0
        assert res.curve.kind == CurveKind.EXCLUSION


class TestMethods:
    def test_all_methods_on_simulated(self):
        sim = simulate_cohort(scenario("confounded", n=500, seed=1))
        for m in METHODS:
            assert isinstance(counterfactual_curve(m, sim.cohort, sim.covariates), EstimateCurve)

    def test_requirements(self, toy):
        with pytest.raises(MissingDataError, match="--covariates"):
            check_requirements("ipcw", toy, None)
        with pytest.raises(ValidationError, match="unknown method"):
            check_requirements("magic", toy, None)
        c = Cohort.from_records([PatientRecord("a", None, 1, D, infected_unknown_day=True),
                                 PatientRecord("b", None, 1, D)], TimeGrid(2))
        with pytest.raises(MissingDataError, match="infection_day"):
            check_requirements("censoring", c, None)
        check_requirements("exclusion", c, None)

    def test_spec_callable(self, toy):
        assert list(MethodSpec("competing")(toy).values) == list(counterfactual_curve("competing", toy).values)
