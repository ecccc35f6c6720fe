import importlib.util
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tdpaf import Event, build_life_table, ccif_censoring
from tdpaf.errors import ValidationError
from tdpaf.simulate import (BLOCK, SCENARIOS, ScenarioConfig, monte_carlo_truth, scenario,
                            simulate_cohort)


def small(name="confounded", **kw):
    kw.setdefault("n", 1500)
    return scenario(name, **kw)


class TestConfig:
    def test_shipped(self):
        assert set(SCENARIOS) == {"no_confounding", "confounded"}
        assert SCENARIOS["no_confounding"].alpha_l == 0
        assert SCENARIOS["confounded"].alpha_l > 0
        assert all(s.n == 50_000 and s.horizon == 30 for s in SCENARIOS.values())

    def test_roundtrip(self):
        cfg = small(seed=4)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_with_base(self):
        cfg = ScenarioConfig.from_dict({"scenario": "confounded", "n": 10})
        assert cfg.n == 10 and cfg.alpha_l == SCENARIOS["confounded"].alpha_l

    def test_unknown_field(self):
        with pytest.raises(ValidationError, match="unknown scenario field"):
            ScenarioConfig.from_dict({"gamma": 1})

    def test_unknown_scenario(self):
        with pytest.raises(ValidationError):
            scenario("nope")

    @pytest.mark.parametrize("kw", [{"n": 0}, {"horizon": 0}, {"seed": -1}, {"sigma": -1.0},
                                    {"rho": float("nan")}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            ScenarioConfig(**kw)

    def test_from_json_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"scenario": "no_confounding", "n": 77, "seed": 3}))
        cfg = ScenarioConfig.from_file(p)
        assert (cfg.n, cfg.seed, cfg.name) == (77, 3, "no_confounding")

    def test_from_toml_file(self, tmp_path):
        if not _has_tomllib():
            pytest.importorskip("tomli")
        p = tmp_path / "s.toml"
        p.write_text('scenario = "confounded"\nn = 12\nalpha_l = 1.5\n')
        cfg = ScenarioConfig.from_file(p)
        assert (cfg.n, cfg.alpha_l) == (12, 1.5)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{")
        with pytest.raises(ValidationError, match="invalid JSON"):
            ScenarioConfig.from_file(p)


def _has_tomllib():
    return importlib.util.find_spec("tomllib") is not None


class TestSimulateCohort:
    def test_shapes_and_ids(self):
        sim = simulate_cohort(small(n=120))
        c = sim.cohort
        assert c.n == 120 and c.patient_ids[0] == "P001" and c.patient_ids[-1] == "P120"
        assert sim.covariates.values.shape == (120, 31, 1)
        assert c.has_full_followup

    def test_record_consistency(self):
        c = simulate_cohort(small()).cohort
        inf = c.infected
        # infection precedes or coincides with the terminal event and starts on day 1
        assert (c.t_tilde[inf] >= 1).all()
        assert (c.t_factual[inf] >= c.t_tilde[inf]).all()
        assert (c.t_tilde[~inf] == c.t_factual[~inf]).all()
        beyond = c.t_factual == c.grid.beyond
        assert (c.eps_factual[beyond] == 0).all()
        assert set(np.unique(c.eps_factual[~beyond])) <= {int(Event.DEATH), int(Event.DISCHARGE)}

    def test_history_observed_until_terminal(self):
        sim = simulate_cohort(small(n=300))
        c, v = sim.cohort, sim.covariates.values[:, :, 0]
        for i in range(c.n):
            # L_j is recorded on days j < T; L_J would only feed a day J+1 hazard
            last = min(int(c.t_factual[i]), c.grid.horizon)
            assert not np.isnan(v[i, :last]).any()
            assert np.isnan(v[i, last:]).all()
        sim.covariates.validate(c)

    def test_deterministic(self):
        a, b = simulate_cohort(small(seed=8)), simulate_cohort(small(seed=8))
        assert_array_equal(a.cohort.t_tilde, b.cohort.t_tilde)
        assert_array_equal(a.covariates.values, b.covariates.values)

    def test_threads_do_not_matter(self):
        cfg = small(n=3 * BLOCK + 17, seed=2)
        a, b = simulate_cohort(cfg, workers=1), simulate_cohort(cfg, workers=4)
        assert_array_equal(a.cohort.t_factual, b.cohort.t_factual)
        assert_array_equal(a.cohort.eps_tilde, b.cohort.eps_tilde)
        assert_array_equal(a.covariates.values, b.covariates.values)

    def test_prefix_stable_in_n(self):
        a = simulate_cohort(small(n=BLOCK + 5, seed=6))
        b = simulate_cohort(small(n=100, seed=6))
        assert_array_equal(a.cohort.t_tilde[:100], b.cohort.t_tilde)

    def test_seed_matters(self):
        a, b = simulate_cohort(small(seed=1)), simulate_cohort(small(seed=2))
        assert not np.array_equal(a.cohort.t_tilde, b.cohort.t_tilde)

    def test_no_infection_without_hazard(self):
        c = simulate_cohort(small(alpha0=-1e3)).cohort
        assert not c.infected.any()


class TestTruth:
    def test_se_and_monotone(self):
        tr = monte_carlo_truth(small(), replicates=20_000)
        assert tr.replicates == 20_000
        assert (np.diff(tr.values) >= 0).all() and tr.values[0] == 0
        assert_allclose(tr.se, np.sqrt(tr.values * (1 - tr.values) / 20_000))

    def test_threads_do_not_matter(self):
        cfg = small()
        a = monte_carlo_truth(cfg, 3 * BLOCK, workers=1)
        b = monte_carlo_truth(cfg, 3 * BLOCK, workers=3)
        assert_array_equal(a.values, b.values)

    def test_matches_uninfected_simulation(self):
        # switching infection off in the factual simulator targets the same law
        cfg = small(n=40_000, alpha0=-1e3)
        c = simulate_cohort(cfg).cohort
        tr = monte_carlo_truth(cfg, 200_000)
        est = ccif_censoring(build_life_table(c)).values
        se = np.sqrt(tr.se ** 2 + tr.values * (1 - tr.values) / cfg.n)
        assert (np.abs(est - tr.values) <= 4 * se + 1e-12).all()

    def test_invalid(self):
        with pytest.raises(ValidationError):
            monte_carlo_truth(small(), 0)
