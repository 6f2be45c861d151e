"""Scenario files, parameter sweeps, and the bundled case studies."""

import numpy as np
import pytest
import yaml

from firesale.calibration import Shock, build_ccar_system, load_ccar_records, load_riskweights
from firesale.clearing import picard_clear
from firesale.errors import CaseStudyMismatchError, ConfigurationError, ScenarioError
from firesale.liquidation import PriceTakingEquilibrium, Proportional, SingleAsset
from firesale.scenario import (
    CASE_STUDY_NAMES,
    PRICE_MAKING,
    CaseStudyReport,
    CheckRow,
    ScenarioConfig,
    SweepSpec,
    Table,
    build_system,
    bundled_scenario_path,
    clear_scenario,
    diversification_system,
    emit_scenario,
    load_scenario,
    resolve_strategy,
    run_case_study,
    sweep,
)


def base_scenario() -> dict:
    return {
        "regulation": {"theta_min": 0.2, "alpha": [1.0, 2.0]},
        "assets": [
            {"family": "power-linear", "params": {"a": 1.0, "b": 0.2}, "shares_outstanding": 2.0},
            {"family": "exponential", "params": {"b": 0.1}, "shares_outstanding": 3.0},
        ],
        "banks": [
            {
                "name": "north",
                "liquid": 0.1,
                "nonmarketable": 0.5,
                "liabilities": 1.2,
                "alpha_nonmarketable": 1.0,
                "holdings": [1.0, 1.5],
            },
            {
                "name": "south",
                "liquid": 0.0,
                "nonmarketable": 0.0,
                "liabilities": 0.4,
                "alpha_nonmarketable": 0.0,
                "holdings": [0.5, 1.0],
            },
        ],
        "strategy": "proportional",
        "solver": {"tol": 1e-10, "max_iter": 50000},
    }


def load_mutated(tmp_path, mutate):
    data = base_scenario()
    mutate(data)
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(data))
    return load_scenario(path)


class TestLoadAndValidate:
    def test_valid_scenario_builds(self, tmp_path):
        config = load_mutated(tmp_path, lambda d: None)
        system = build_system(config)
        assert system.n == 2 and system.m == 2
        assert system.banks[0].name == "north"

    @pytest.mark.parametrize(
        "mutate, fragment",
        [
            (lambda d: d["banks"][0]["holdings"].append(1.0), "banks.0.holdings"),
            (lambda d: d["banks"][1]["holdings"].__setitem__(1, -0.5), "banks.1.holdings.1"),
            (lambda d: d["regulation"]["alpha"].__setitem__(0, 9.0), "regulation.alpha.0"),
            (lambda d: d["regulation"]["alpha"].pop(), "regulation.alpha"),
            (lambda d: d["regulation"].__setitem__("theta_min", 0.0), "regulation.theta_min"),
            (lambda d: d["assets"][0].__setitem__("family", "quadratic"), "assets.0.family"),
            (lambda d: d["assets"][1].__setitem__("shares_outstanding", 0.0),
             "assets.1.shares_outstanding"),
            (lambda d: d["banks"][1].__setitem__("name", "north"), "unique"),
            (lambda d: d.__setitem__("strategy", "oracle"), "strategy"),
            (lambda d: d["solver"].__setitem__("tol", -1.0), "solver.tol"),
            (lambda d: d["solver"].__setitem__("max_iter", 0), "solver.max_iter"),
            (lambda d: d["banks"][0].__setitem__("liquid", -1.0), "banks.0.liquid"),
            (lambda d: d["assets"][0]["params"].__setitem__("color", "red"), "assets.0.params"),
        ],
    )
    def test_invariant_failures_carry_field_paths(self, tmp_path, mutate, fragment):
        with pytest.raises(ScenarioError, match=fragment.replace(".", r"\.")):
            load_mutated(tmp_path, mutate)

    def test_overheld_asset_rejected(self, tmp_path):
        def mutate(d):
            d["banks"][0]["holdings"][0] = 5.0

        with pytest.raises(ScenarioError, match="more than the 2 outstanding"):
            load_mutated(tmp_path, mutate)

    def test_discount_message_names_the_bound(self, tmp_path):
        def mutate(d):
            d["regulation"]["alpha"][1] = 5.0

        with pytest.raises(ScenarioError, match="must stay positive"):
            load_mutated(tmp_path, mutate)

    def test_unknown_top_level_key_rejected(self, tmp_path):
        with pytest.raises(ScenarioError, match="observer"):
            load_mutated(tmp_path, lambda d: d.__setitem__("observer", True))

    def test_non_mapping_file(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ScenarioError, match="top level must be a mapping"):
            load_scenario(path)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("regulation: [unclosed\n")
        with pytest.raises(ScenarioError, match="not valid YAML"):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot read"):
            load_scenario(tmp_path / "nope.yaml")


class TestStrategyResolution:
    def test_labels_and_aliases(self):
        assert isinstance(resolve_strategy("single-asset"), SingleAsset)
        assert isinstance(resolve_strategy("Proportional"), Proportional)
        assert isinstance(resolve_strategy("price_taking"), PriceTakingEquilibrium)
        assert isinstance(
            resolve_strategy("price-taking-equilibrium"), PriceTakingEquilibrium
        )
        assert resolve_strategy("price-making") == PRICE_MAKING
        assert resolve_strategy("price_making_equilibrium") == PRICE_MAKING

    def test_unknown_label(self):
        with pytest.raises(ConfigurationError, match="unknown strategy"):
            resolve_strategy("martingale")


class TestRoundTrip:
    @pytest.mark.parametrize("name", CASE_STUDY_NAMES)
    def test_emit_then_load_is_identity(self, name, tmp_path):
        config = load_scenario(bundled_scenario_path(name))
        emitted = emit_scenario(config)
        path = tmp_path / "echo.yaml"
        path.write_text(emitted)
        assert load_scenario(path) == config
        # and a second bounce changes nothing
        assert emit_scenario(load_scenario(path)) == emitted

    def test_unknown_bundled_name(self):
        with pytest.raises(ScenarioError, match="no bundled scenario"):
            bundled_scenario_path("enron")


def test_bundled_ccar_matches_fresh_calibration():
    config = load_scenario(bundled_scenario_path("ccar"))
    from_yaml = build_system(config)
    rebuilt = build_ccar_system(
        load_ccar_records(), load_riskweights(), theta_min=0.08, shock=Shock(0.95)
    )
    assert np.allclose(from_yaml.holdings_matrix(), rebuilt.holdings_matrix(), rtol=1e-9)
    assert np.allclose(
        from_yaml.market.shares_outstanding, rebuilt.market.shares_outstanding, rtol=1e-9
    )
    for ours, theirs in zip(from_yaml.market.assets, rebuilt.market.assets):
        assert ours.b == pytest.approx(theirs.b, rel=1e-9)
    for ours, theirs in zip(from_yaml.banks, rebuilt.banks):
        assert ours.p_bar == pytest.approx(theirs.p_bar)
        assert ours.ell == pytest.approx(theirs.ell)


def test_clear_scenario_solves_the_bundled_low_impact_case():
    config = load_scenario(bundled_scenario_path("two-bank-low"))
    system, strategy, result = clear_scenario(config)
    assert isinstance(strategy, SingleAsset)
    assert result.prices.q[0] == pytest.approx((34.0 - np.sqrt(61.0)) / 30.0, abs=1e-9)
    assert result.residual <= config.solver.tol


class TestSweepSpec:
    def test_grid_validation(self):
        with pytest.raises(ConfigurationError, match="nonempty"):
            SweepSpec("lambda", ())
        with pytest.raises(ConfigurationError, match="sorted"):
            SweepSpec("lambda", (0.5, 0.1))
        with pytest.raises(ConfigurationError, match="distinct"):
            SweepSpec("lambda", (0.1, 0.1))
        with pytest.raises(ConfigurationError, match="finite"):
            SweepSpec("lambda", (0.1, float("nan")))
        with pytest.raises(ConfigurationError, match="unknown sweep outputs"):
            SweepSpec("lambda", (0.1,), outputs=("volatility",))

    def test_output_subset_controls_headers(self):
        spec = SweepSpec("diversification.lambda", (0.5,), outputs=("market_cap",))
        table = sweep(None, spec)
        assert table.headers == ("diversification.lambda", "market_cap", "error")


class TestSweep:
    def test_dotted_path_rows_match_direct_solves(self, tmp_path):
        config = load_scenario(bundled_scenario_path("two-bank-low"))
        spec = SweepSpec("assets.0.params.b", (0.15, 0.45), outputs=("prices", "market_cap"))
        table = sweep(config, spec)
        assert [row[0] for row in table.rows] == ["0.15", "0.45"]
        low = float(table.rows[0][1])
        high = float(table.rows[1][1])
        assert low == pytest.approx((34.0 - np.sqrt(61.0)) / 30.0, abs=1e-9)
        assert high == pytest.approx(0.10, abs=1e-9)
        assert table.rows[0][-1] == ""

    def test_failed_point_keeps_its_row(self, tmp_path):
        config = load_scenario(bundled_scenario_path("two-bank-low"))
        # b = 0.6 breaks the power-linear bound b < 1/M = 0.5
        table = sweep(config, SweepSpec("assets.0.params.b", (0.15, 0.6)))
        good, bad = table.rows
        assert good[-1] == ""
        assert "power-linear slope" in bad[-1]
        assert set(bad[1:-1]) == {""}

    def test_unknown_path_is_recorded_not_raised(self, tmp_path):
        config = load_scenario(bundled_scenario_path("two-bank-low"))
        table = sweep(config, SweepSpec("banks.0.altitude", (1.0,)))
        assert "no such field" in table.rows[0][-1]
        table = sweep(config, SweepSpec("banks.0.name", (1.0,)))
        assert "not numeric" in table.rows[0][-1]

    def test_dotted_path_requires_config(self):
        with pytest.raises(ConfigurationError, match="needs a scenario config"):
            sweep(None, SweepSpec("assets.0.params.b", (0.1,)))

    def test_lambda_sweep_is_self_contained(self):
        table = sweep(None, SweepSpec("diversification.lambda", (0.0, 1.0)))
        assert "class[bank-1]" in table.headers
        cap = table.headers.index("market_cap")
        direct = picard_clear(diversification_system(1.0), Proportional(), tol=1e-10)
        assert float(table.rows[1][cap]) == pytest.approx(
            direct.market_capitalization(diversification_system(1.0)), abs=1e-6
        )

    def test_shock_sweep_uses_writedown_fractions(self):
        table = sweep(
            None, SweepSpec("shock.factor", (0.0, 0.05), outputs=("market_cap",))
        )
        calm, stressed = table.rows
        assert float(calm[1]) == pytest.approx(3280.14, abs=1e-6)
        direct = build_ccar_system(
            load_ccar_records(), load_riskweights(), theta_min=0.08, shock=Shock(0.95)
        )
        result = picard_clear(direct, Proportional(), tol=1e-10)
        assert float(stressed[1]) == pytest.approx(
            result.market_capitalization(direct), rel=1e-9
        )

    def test_shock_fraction_out_of_range_recorded(self):
        table = sweep(None, SweepSpec("shock.factor", (1.5,)))
        assert "writedown fraction" in table.rows[0][-1]


def test_table_to_csv_quotes_nothing_unnecessarily():
    table = Table("demo", ("a", "b"), (("1", "x"), ("2", "y,z")))
    assert table.to_csv() == 'a,b\n1,x\n2,"y,z"\n'


class TestDiversificationSystem:
    def test_mixing_preserves_totals(self):
        for lam in (0.0, 0.3, 1.0):
            system = diversification_system(lam)
            assert np.allclose(system.holdings_matrix().sum(axis=0), [2.0, 2.0])
        assert np.allclose(diversification_system(1.0).holdings_matrix(), 1.0)

    def test_weight_range(self):
        with pytest.raises(ConfigurationError, match=r"\[0, 2\]"):
            diversification_system(2.5)


class TestCaseStudies:
    @pytest.mark.parametrize("name", ["two-bank-low", "two-bank-high"])
    def test_two_bank_studies_pass(self, name):
        report = run_case_study(name)
        assert report.passed
        assert report.failures == ()
        table = report.check_table()
        assert all(row[0] == "ok" for row in table.rows)

    def test_unknown_name(self):
        with pytest.raises(ScenarioError, match="unknown case study"):
            run_case_study("ltcm")

    def test_strict_mismatch_raises_with_diffs(self, monkeypatch):
        failing = CaseStudyReport(
            name="two-bank-low",
            tables=(),
            checks=(CheckRow("q at clearing", "1", "2", False),),
        )
        monkeypatch.setattr("firesale.scenario._case_two_bank", lambda name: failing)
        with pytest.raises(CaseStudyMismatchError, match="diverged on 1 of 1") as excinfo:
            run_case_study("two-bank-low")
        assert excinfo.value.diffs == ["q at clearing: expected 1, got 2"]
        assert excinfo.value.report is failing
        report = run_case_study("two-bank-low", strict=False)
        assert not report.passed
        assert report.diff_table().rows == (("q at clearing", "1", "2"),)
