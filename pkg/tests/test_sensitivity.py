"""Price sensitivities: the implicit-function solve against re-clearing."""

import math
import warnings

import numpy as np
import pytest

from firesale.banking import Bank, BankingSystem, Regulation
from firesale.clearing import picard_clear
from firesale.errors import (
    ConfigurationError,
    KinkError,
    NonDifferentiableFamilyError,
)
from firesale.liquidation import (
    BoundaryWarning,
    ParamTag,
    Proportional,
    SingleAsset,
)
from firesale.market import InverseDemand, Market
from firesale.sensitivity import (
    LinearResponse,
    finite_difference_check,
    parallel_riskweight_impact,
    price_sensitivity,
)

from conftest import random_certified_system, two_bank_system


def all_tags(n: int, m: int):
    yield ParamTag.threshold()
    for k in range(m):
        yield ParamTag.risk_weight(k)
        yield ParamTag.asset_purchase(k)
    for i in range(n):
        yield ParamTag.shortfall(i)
        for k in range(m):
            yield ParamTag.holding(i, k)


def scalar_implicit_oracle(system: BankingSystem, gamma: float, q: float, q_bar: float, b: float):
    """dq*/dh_1 for the single-asset instance by direct implicit
    differentiation of q = f(gamma(q, q_bar, h)), q_bar = fbar(gamma)."""
    B = 1.0 - system.regulation.alpha[0] * system.regulation.theta_min
    s = system.banks[0].s[0]
    w = q_bar - B * q
    dgamma_dq = -B * (s - gamma) / w
    dgamma_dqbar = -gamma / w
    dgamma_dh = 1.0 / w
    fp, fbarp = -b, -b / 2.0
    W = np.array(
        [
            [fp * dgamma_dq, fp * dgamma_dqbar],
            [fbarp * dgamma_dq, fbarp * dgamma_dqbar],
        ]
    )
    rhs = np.array([fp * dgamma_dh, fbarp * dgamma_dh])
    return np.linalg.solve(np.eye(2) - W, rhs)


def test_shortfall_sensitivity_matches_scalar_oracle(low_impact_system):
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    result = price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.shortfall(0))
    oracle = scalar_implicit_oracle(
        low_impact_system,
        clearing.gamma[0, 0],
        clearing.prices.q[0],
        clearing.prices.q_bar[0],
        b=0.15,
    )
    assert result.dq[0] == pytest.approx(oracle[0], rel=1e-10)
    assert result.dq_bar[0] == pytest.approx(oracle[1], rel=1e-10)
    # frozen value: more selling pressure moves the clearing price down
    assert result.dq[0] == pytest.approx(-0.960276599498, abs=1e-9)


@pytest.mark.parametrize("kind", ["theta", "alpha", "shortfall", "holding", "purchase"])
def test_every_tag_matches_finite_differences(kind, low_impact_system):
    tags = {
        "theta": ParamTag.threshold(),
        "alpha": ParamTag.risk_weight(0),
        "shortfall": ParamTag.shortfall(0),
        "holding": ParamTag.holding(0, 0),
        "purchase": ParamTag.asset_purchase(0),
    }
    tag = tags[kind]
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    analytic = price_sensitivity(low_impact_system, SingleAsset(), clearing, tag)
    numeric = finite_difference_check(low_impact_system, SingleAsset(), tag)
    scale = max(np.max(np.abs(numeric.stacked())), 1e-12)
    assert np.max(np.abs(analytic.stacked() - numeric.stacked())) / scale < 1e-5


def test_random_certified_systems_match_finite_differences():
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(5):
        system = random_certified_system(rng, n_max=4, m_max=3)
        clearing = picard_clear(system, Proportional(), tol=1e-12)
        response = LinearResponse(system, Proportional(), clearing)
        for tag in all_tags(system.n, system.m):
            analytic = response.solve(tag)
            try:
                numeric = finite_difference_check(system, Proportional(), tag, tol=1e-12)
            except KinkError:
                continue  # a class boundary sits inside the stencil
            scale = max(np.max(np.abs(numeric.stacked())), 1e-9)
            assert np.max(np.abs(analytic.stacked() - numeric.stacked())) / scale < 1e-4, tag.describe()
            checked += 1
    assert checked > 30


def test_threshold_tightening_depresses_prices(low_impact_system):
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    d_theta = price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.threshold())
    assert d_theta.dq[0] < 0
    d_alpha = price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.risk_weight(0))
    assert d_alpha.dq[0] < 0


def test_purchase_sensitivity_signs(low_impact_system):
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    result = price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.asset_purchase(0))
    assert result.dq[0] > 0  # official purchases prop up the price
    assert result.dq_bar[0] > 0


def test_purchase_of_untraded_asset_does_nothing():
    market = Market(
        [
            InverseDemand("power-linear", 2.0, a=1.0, b=0.15),
            InverseDemand("power-linear", 2.0, a=1.0, b=0.15),
        ]
    )
    banks = (
        Bank("active", 0.0, 0.0, np.array([1.0, 0.0]), 0.9, 1.0),
        Bank("idle", 0.0, 0.0, np.array([0.0, 1.0]), 0.0, 1.0),
    )
    system = BankingSystem(banks, market, Regulation(0.2, np.array([1.0, 1.0])))
    clearing = picard_clear(system, Proportional(), tol=1e-13)
    assert clearing.aggregate_liquidation[1] == 0.0
    result = price_sensitivity(system, Proportional(), clearing, ParamTag.asset_purchase(1))
    assert np.all(result.stacked() == 0.0)


def test_condition_number_is_recorded(low_impact_system):
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    result = price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.shortfall(0))
    assert math.isfinite(result.condition_number)
    assert result.condition_number >= 1.0


def test_boundary_bank_is_flagged():
    """A bank sitting exactly on the liquid boundary shows up in warnings."""
    system = two_bank_system(0.15)
    # replace bank 2 with one whose shortfall equals q'Bs exactly at par
    boundary = Bank("edge", 0.0, 0.0, np.array([1.0]), 0.8, 1.0)  # h = 0.8 = 1*0.8*1
    system = system.with_banks([system.banks[0], boundary])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        from firesale.liquidation import jacobian_rows
        from firesale.banking import PricePair

        jacobian_rows(SingleAsset(), system, PricePair.ones(1))
    assert any(issubclass(w.category, BoundaryWarning) and "edge" in str(w.message) for w in caught)


def test_kink_error_when_stencil_straddles_a_class_flip():
    """A bank pinned on the liquid bound flips class inside the stencil."""
    market = Market([InverseDemand("power-linear", 2.0, a=1.0, b=0.05)])
    banks = (
        Bank("pinned", 0.0, 0.0, np.array([1.0]), 0.8, 1.0),  # h = q'Bs at par
        Bank("busy", 0.0, 0.0, np.array([1.0]), 0.5, 1.0),
    )
    system = BankingSystem(banks, market, Regulation(0.2, np.array([1.0])))
    with pytest.raises(KinkError, match="smaller step"):
        finite_difference_check(system, SingleAsset(), ParamTag.shortfall(0))


def test_limit_order_book_refuses_derivatives():
    market = Market([InverseDemand("limit-order-book", 2.0, levels=((1.0, 2.0),))])
    banks = (Bank("b", 0.0, 0.0, np.array([1.0]), 0.5, 1.0),)
    system = BankingSystem(banks, market, Regulation(0.2, np.array([1.0])))
    clearing = picard_clear(system, SingleAsset(), tol=1e-13)
    with pytest.raises(NonDifferentiableFamilyError):
        price_sensitivity(system, SingleAsset(), clearing, ParamTag.shortfall(0))


def test_parallel_riskweight_impact_sums_per_asset_solves():
    rng = np.random.default_rng(31)
    system = random_certified_system(rng, n_max=3, m_max=3)
    clearing = picard_clear(system, Proportional(), tol=1e-12)
    response = LinearResponse(system, Proportional(), clearing)
    M = system.market.shares_outstanding
    expected = sum(
        float(M @ response.solve(ParamTag.risk_weight(k)).dq) for k in range(system.m)
    )
    assert parallel_riskweight_impact(system, Proportional(), clearing) == pytest.approx(expected)
    assert expected <= 1e-12  # tightening weights cannot raise prices


def test_invalid_tags_rejected(low_impact_system):
    clearing = picard_clear(low_impact_system, SingleAsset(), tol=1e-13)
    with pytest.raises(ConfigurationError):
        price_sensitivity(low_impact_system, SingleAsset(), clearing, ParamTag.risk_weight(4))
    with pytest.raises(ConfigurationError):
        finite_difference_check(low_impact_system, SingleAsset(), ParamTag.shortfall(0), step=-1.0)
