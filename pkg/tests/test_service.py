"""HTTP surface: response shapes, error envelopes, option plumbing."""

import warnings

import numpy as np
import pytest
import yaml

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from firesale.scenario import bundled_scenario_path
from firesale.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def low_scenario():
    return yaml.safe_load(bundled_scenario_path("two-bank-low").read_text())


@pytest.fixture(scope="module")
def high_scenario():
    return yaml.safe_load(bundled_scenario_path("two-bank-high").read_text())


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


class TestClear:
    def test_success_shape(self, client, low_scenario):
        response = client.post("/clear", json={"scenario": low_scenario})
        assert response.status_code == 200
        body = response.json()
        assert body["banks"] == ["bank-1", "bank-2"]
        assert body["prices"]["q"][0] == pytest.approx((34 - np.sqrt(61)) / 30, abs=1e-9)
        assert body["prices"]["q_bar"][0] == pytest.approx((64 - np.sqrt(61)) / 60, abs=1e-9)
        assert body["classes"] == ["solvent-illiquid", "solvent-liquid"]
        assert body["residual"] <= 1e-12
        assert body["market_cap"] == pytest.approx(2 * body["prices"]["q"][0])
        assert len(body["gamma"]) == 2 and len(body["gamma"][0]) == 1

    def test_solver_failure_envelope(self, client, high_scenario):
        response = client.post(
            "/clear", json={"scenario": high_scenario, "max_iter": 2}
        )
        assert response.status_code == 409
        envelope = response.json()["error"]
        assert envelope["exit_code"] == 3
        assert envelope["type"] == "NonConvergenceError"
        assert "did not converge" in envelope["message"]

    def test_domain_failure_envelope(self, client, low_scenario):
        broken = dict(low_scenario, regulation={"theta_min": 0.2, "alpha": [9.0]})
        response = client.post("/clear", json={"scenario": broken})
        assert response.status_code == 422
        envelope = response.json()["error"]
        assert envelope["exit_code"] == 2
        assert "regulation.alpha.0" in envelope["message"]

    def test_missing_scenario_uses_fastapi_detail(self, client):
        response = client.post("/clear", json={})
        assert response.status_code == 422
        assert "detail" in response.json()

    def test_unknown_request_field_rejected(self, client, low_scenario):
        response = client.post(
            "/clear", json={"scenario": low_scenario, "verbosity": 3}
        )
        assert response.status_code == 422

    def test_strategy_override(self, client, low_scenario):
        response = client.post(
            "/clear", json={"scenario": low_scenario, "strategy": "utility-max"}
        )
        assert response.status_code == 200
        assert response.json()["prices"]["q"][0] == pytest.approx(
            (34 - np.sqrt(61)) / 30, abs=1e-7
        )


class TestSensitivity:
    def test_threshold_response(self, client, low_scenario):
        response = client.post(
            "/sensitivity",
            json={"scenario": low_scenario, "param": {"kind": "theta"}},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["dq"][0] < 0
        assert body["condition_number"] >= 1.0
        assert body["boundary_warnings"] == []

    def test_shortfall_param_accepts_bank_names(self, client, low_scenario):
        by_name = client.post(
            "/sensitivity",
            json={"scenario": low_scenario, "param": {"kind": "shortfall", "bank": "bank-1"}},
        ).json()
        by_index = client.post(
            "/sensitivity",
            json={"scenario": low_scenario, "param": {"kind": "shortfall", "bank": 0}},
        ).json()
        assert by_name["dq"] == by_index["dq"]
        assert by_name["dq"][0] == pytest.approx(-0.960276599498, rel=1e-6)

    def test_incomplete_param_envelope(self, client, low_scenario):
        response = client.post(
            "/sensitivity",
            json={"scenario": low_scenario, "param": {"kind": "alpha"}},
        )
        assert response.status_code == 422
        assert "param.asset is required" in response.json()["error"]["message"]

    def test_unknown_bank_name(self, client, low_scenario):
        response = client.post(
            "/sensitivity",
            json={"scenario": low_scenario, "param": {"kind": "shortfall", "bank": "bank-9"}},
        )
        assert response.status_code == 422
        assert "no bank named" in response.json()["error"]["message"]

    def test_price_making_strategy_rejected(self, client, low_scenario):
        response = client.post(
            "/sensitivity",
            json={
                "scenario": low_scenario,
                "strategy": "price-making",
                "param": {"kind": "theta"},
            },
        )
        assert response.status_code == 422
        assert "no linear response" in response.json()["error"]["message"]

    def test_limit_order_book_rejected(self, client):
        scenario = {
            "regulation": {"theta_min": 0.5, "alpha": [1.0]},
            "assets": [
                {
                    "family": "limit-order-book",
                    "params": {"levels": [[1.0, 0.2], [0.6, 1.8]]},
                    "shares_outstanding": 2.0,
                }
            ],
            "banks": [
                {
                    "name": "solo",
                    "liquid": 0.0,
                    "nonmarketable": 0.0,
                    "liabilities": 0.95,
                    "alpha_nonmarketable": 0.0,
                    "holdings": [1.8],
                }
            ],
            "strategy": "single-asset",
        }
        response = client.post(
            "/sensitivity", json={"scenario": scenario, "param": {"kind": "theta"}}
        )
        assert response.status_code == 422
        assert "differentiable" in response.json()["error"]["message"]


class TestPolicy:
    def test_all_metrics(self, client, low_scenario):
        response = client.post("/policy", json={"scenario": low_scenario})
        assert response.status_code == 200
        reports = response.json()["reports"]
        metrics = [r["metric"] for r in reports]
        # CR once, CRL/CMI/DCB per bank, ICB per asset
        assert metrics == ["CR", "CRL", "CRL", "CMI", "CMI", "DCB", "DCB", "ICB"]
        assert all(r["applicable"] for r in reports if r["metric"] != "DCB")

    def test_dcb_applicability_notes(self, client, low_scenario):
        response = client.post(
            "/policy", json={"scenario": low_scenario, "metric": "dcb"}
        )
        first, second = response.json()["reports"]
        assert first["subject"] == "bank-1" and first["applicable"]
        assert second["subject"] == "bank-2" and not second["applicable"]
        assert "solvent-liquid" in second["note"]
        assert second["value"] == pytest.approx(-1.0)

    def test_dpb_requires_source(self, client, low_scenario):
        response = client.post(
            "/policy", json={"scenario": low_scenario, "metric": "dpb"}
        )
        assert response.status_code == 422
        assert "needs a source bank" in response.json()["error"]["message"]
        response = client.post(
            "/policy",
            json={"scenario": low_scenario, "metric": "dpb", "source": "bank-2"},
        )
        assert response.status_code == 200
        (report,) = response.json()["reports"]
        assert report["subject"] == "bank-2->bank-1"

    def test_ipb_per_asset(self, client, low_scenario):
        response = client.post(
            "/policy",
            json={"scenario": low_scenario, "metric": "ipb", "source": "bank-2"},
        )
        assert response.status_code == 200
        (report,) = response.json()["reports"]
        assert report["subject"] == "bank-2->asset 0"

    def test_bank_index_out_of_range(self, client, low_scenario):
        response = client.post(
            "/policy", json={"scenario": low_scenario, "metric": "crl", "bank": 7}
        )
        assert response.status_code == 422
        assert "out of range" in response.json()["error"]["message"]


class TestCalibrate:
    def test_stress_run_with_emit(self, client):
        response = client.post(
            "/calibrate", json={"theta_min": 0.08, "shock": 0.05, "emit": True}
        )
        assert response.status_code == 200
        body = response.json()
        assert len(body["banks"]) == 6
        assert len(body["risk_weights"]) == 16
        assert body["clearing"] is not None
        assert "insolvent" in body["clearing"]["classes"]
        scenario = body["scenario"]
        assert scenario is not None
        echoed = client.post("/clear", json={"scenario": scenario})
        assert echoed.status_code == 200
        assert echoed.json()["market_cap"] == pytest.approx(
            body["clearing"]["market_cap"], rel=1e-9
        )

    def test_no_clear_skips_solving(self, client):
        response = client.post("/calibrate", json={"clear": False})
        assert response.status_code == 200
        body = response.json()
        assert body["clearing"] is None and body["scenario"] is None

    def test_shock_fraction_validated(self, client):
        response = client.post("/calibrate", json={"shock": 1.5})
        assert response.status_code == 422
        assert "writedown fraction" in response.json()["error"]["message"]

    def test_custom_records(self, client):
        records = [
            {
                "name": "alpha", "capital": 10.0, "liquid": 5.0, "marketable": 20.0,
                "nonmarketable": 10.0, "marketable_rwa": 8.0, "nonmarketable_rwa": 5.0,
            }
        ]
        response = client.post(
            "/calibrate", json={"records": records, "theta_min": 0.1, "clear": False}
        )
        assert response.status_code == 200
        (bank,) = response.json()["banks"]
        assert bank["name"] == "alpha"
        assert bank["liabilities"] == pytest.approx(25.0)

    def test_infeasible_records_envelope(self, client):
        records = [
            {
                "name": "odd", "capital": 1.0, "liquid": 0.0, "marketable": 1.0,
                "nonmarketable": 0.0, "marketable_rwa": 99.0, "nonmarketable_rwa": 0.0,
            }
        ]
        response = client.post("/calibrate", json={"records": records, "clear": False})
        assert response.status_code == 422
        assert "outside the risk-weight" in response.json()["error"]["message"]


class TestCaseStudy:
    def test_two_bank_high(self, client):
        response = client.post("/case-study", json={"name": "two-bank-high"})
        assert response.status_code == 200
        body = response.json()
        assert body["passed"] is True
        assert all(check["ok"] for check in body["checks"])
        assert any("insolvent" in str(t) for t in body["tables"])

    def test_unknown_name(self, client):
        response = client.post("/case-study", json={"name": "tulips"})
        assert response.status_code == 422
        assert "unknown case study" in response.json()["error"]["message"]


class TestSweep:
    def test_scenario_parameter(self, client, low_scenario):
        response = client.post(
            "/sweep",
            json={
                "scenario": low_scenario,
                "parameter": "banks.0.liabilities",
                "grid": [0.6, 0.9],
                "outputs": ["market_cap"],
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["headers"] == ["banks.0.liabilities", "market_cap", "error"]
        assert float(body["rows"][0][1]) > float(body["rows"][1][1])

    def test_self_contained_parameter(self, client):
        response = client.post(
            "/sweep",
            json={"parameter": "shock.factor", "grid": [0.0], "outputs": ["market_cap"]},
        )
        assert response.status_code == 200
        assert float(response.json()["rows"][0][1]) == pytest.approx(3280.14)

    def test_bad_grid_envelope(self, client):
        response = client.post(
            "/sweep", json={"parameter": "diversification.lambda", "grid": [0.5, 0.1]}
        )
        assert response.status_code == 422
        assert "sorted" in response.json()["error"]["message"]
