"""Derivative-based policy metrics.

Two families of questions are answered at the margin of a clearing
solution.  What does tightening the capital threshold cost, systemwide and
per bank (CR, CRL, CMI)?  And is a marginal bailout worth its price, for
each of four designs: the central bank wiring cash to a bank (DCB), one
bank bailing out another (DPB), the central bank propping up an asset
(ICB), and a bank propping up an asset (IPB)?

Every metric is the total derivative of an explicit value quantity, so
each one can be checked by re-clearing a perturbed system and differencing
that quantity.  Liquidation responses therefore always include the price
feedback, not just the direct channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .banking import BankingSystem, SolvencyClass
from .clearing import ClearingResult, picard_clear
from .errors import ConfigurationError
from .liquidation import ParamTag, StrategyLike
from .sensitivity import LinearResponse

_BAILOUT_ADVISABLE = "bailout advisable (marginal value exceeds its cost)"
_BAILOUT_NOT_ADVISABLE = "bailout not advisable (marginal value below its cost)"


@dataclass(frozen=True)
class PolicyReport:
    """One policy metric evaluated for one subject."""

    metric: str
    subject: str
    value: float
    sign_interpretation: str

    def __str__(self) -> str:
        return f"{self.metric}[{self.subject}] = {self.value:.6g}: {self.sign_interpretation}"


def _ensure_clearing(
    system: BankingSystem, strategy: StrategyLike, clearing: Optional[ClearingResult]
) -> ClearingResult:
    return clearing if clearing is not None else picard_clear(system, strategy)


def _cost_interpretation(value: float) -> str:
    if value > 1e-12:
        return "tightening the requirement destroys value at this rate"
    if value < -1e-12:
        # possible for a partial liquidator: the extra forced sales are
        # booked at the volume-weighted price, above the terminal mark
        return "tightening the requirement adds value at this rate"
    return "no marginal cost (no fire-sale channel)"


def _bailout_interpretation(value: float) -> str:
    return _BAILOUT_ADVISABLE if value > 0 else _BAILOUT_NOT_ADVISABLE


def _bank_subject(system: BankingSystem, i: int) -> str:
    return system.banks[i].name


def cost_regulation_market(
    system: BankingSystem,
    strategy: StrategyLike,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Marked-to-market cost of regulation: CR = -M' dq*/dtheta.

    The rate at which total market capitalization is destroyed as the
    capital requirement tightens.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    response = LinearResponse(system, strategy, clearing)
    d_theta = response.solve(ParamTag.threshold())
    value = -float(system.market.shares_outstanding @ d_theta.dq)
    return PolicyReport("CR", "system", value, _cost_interpretation(value))


def cost_regulation_realized(
    system: BankingSystem,
    strategy: StrategyLike,
    i: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Realized-loss cost of regulation for bank i.

    CRL_i = -(dq_bar/dtheta)' gamma_i + (1 - q_bar)' dgamma_i/dtheta,
    the rate at which bank i's losses from actually selling below par grow
    with the threshold.  Zero for banks that do not sell.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    response = LinearResponse(system, strategy, clearing)
    d_theta = response.solve(ParamTag.threshold())
    d_gamma = response.gamma_row_response(i, ParamTag.threshold(), d_theta)
    gamma_i = clearing.gamma[i]
    value = -float(d_theta.dq_bar @ gamma_i) + float((1.0 - clearing.prices.q_bar) @ d_gamma)
    return PolicyReport("CRL", _bank_subject(system, i), value, _cost_interpretation(value))


def cost_regulation_mtm(
    system: BankingSystem,
    strategy: StrategyLike,
    i: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Mark-to-market cost of regulation for bank i.

    CMI_i = -[(dq_bar/dtheta)' gamma_i + (dq/dtheta)' (s_i - gamma_i)
             + (q_bar - q)' dgamma_i/dtheta],
    the rate at which bank i's capital erodes as the threshold tightens.
    Nonzero for any bank exposed to the moving prices, selling or not.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    response = LinearResponse(system, strategy, clearing)
    d_theta = response.solve(ParamTag.threshold())
    d_gamma = response.gamma_row_response(i, ParamTag.threshold(), d_theta)
    gamma_i = clearing.gamma[i]
    rest = system.banks[i].s - gamma_i
    q, q_bar = clearing.prices.q, clearing.prices.q_bar
    value = -(
        float(d_theta.dq_bar @ gamma_i)
        + float(d_theta.dq @ rest)
        + float((q_bar - q) @ d_gamma)
    )
    return PolicyReport("CMI", _bank_subject(system, i), value, _cost_interpretation(value))


def direct_central_bailout(
    system: BankingSystem,
    strategy: StrategyLike,
    i: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Value of the central bank covering one unit of bank i's shortfall.

    DCB_i = -(M' dq*/dh_i + 1): the market-capitalization gain from the
    relieved shortfall, net of the unit spent.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    response = LinearResponse(system, strategy, clearing)
    d_h = response.solve(ParamTag.shortfall(i))
    value = -(float(system.market.shares_outstanding @ d_h.dq) + 1.0)
    return PolicyReport("DCB", _bank_subject(system, i), value, _bailout_interpretation(value))


def direct_private_bailout(
    system: BankingSystem,
    strategy: StrategyLike,
    j: int,
    i: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Value to bank j of covering one unit of bank i's shortfall.

    The transfer raises h_j and lowers h_i simultaneously; the metric is
    the total derivative of bank j's capital along that direction, the
    final -1 being the transfer itself.
    """
    if j == i:
        raise ConfigurationError("a bank cannot bail itself out; pick distinct banks")
    clearing = _ensure_clearing(system, strategy, clearing)
    if clearing.classes[j] is SolvencyClass.INSOLVENT:
        raise ConfigurationError(
            f"bank {system.banks[j].name!r} is insolvent at clearing and cannot fund a bailout"
        )
    response = LinearResponse(system, strategy, clearing)
    d_hj = response.solve(ParamTag.shortfall(j))
    d_hi = response.solve(ParamTag.shortfall(i))
    d_gamma_j = response.gamma_row_response(j, ParamTag.shortfall(j), d_hj)
    d_gamma_i = response.gamma_row_response(j, ParamTag.shortfall(i), d_hi)
    gamma_j = clearing.gamma[j]
    rest = system.banks[j].s - gamma_j
    q, q_bar = clearing.prices.q, clearing.prices.q_bar
    value = (
        float((d_hj.dq_bar - d_hi.dq_bar) @ gamma_j)
        + float((d_hj.dq - d_hi.dq) @ rest)
        + float((q_bar - q) @ (d_gamma_j - d_gamma_i))
        - 1.0
    )
    subject = f"{system.banks[j].name}->{system.banks[i].name}"
    return PolicyReport("DPB", subject, value, _bailout_interpretation(value))


def indirect_central_bailout(
    system: BankingSystem,
    strategy: StrategyLike,
    k: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Value of the central bank spending one unit buying asset k.

    ICB_k = M' dq*/dbeta_k - 1, evaluated at beta = 0.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    response = LinearResponse(system, strategy, clearing)
    d_beta = response.solve(ParamTag.asset_purchase(k))
    value = float(system.market.shares_outstanding @ d_beta.dq) - 1.0
    return PolicyReport("ICB", f"asset {k}", value, _bailout_interpretation(value))


def indirect_private_bailout(
    system: BankingSystem,
    strategy: StrategyLike,
    j: int,
    k: int,
    clearing: Optional[ClearingResult] = None,
) -> PolicyReport:
    """Value to bank j of spending one unit buying asset k itself.

    The unit of cash buys 1/q_bar_k shares, so the perturbation moves
    three parameters at once: h_j up by one, s_jk up by 1/q_bar_k, and the
    purchase flow beta_k up by one.  The metric is the total derivative of
    bank j's capital along that combined direction; the out-of-pocket cost
    nets against the immediate marked value q_k/q_bar_k of the shares.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    if clearing.classes[j] is SolvencyClass.INSOLVENT:
        raise ConfigurationError(
            f"bank {system.banks[j].name!r} is insolvent at clearing and cannot fund a bailout"
        )
    response = LinearResponse(system, strategy, clearing)
    q, q_bar = clearing.prices.q, clearing.prices.q_bar
    share_rate = 1.0 / q_bar[k]
    tags_and_weights = (
        (ParamTag.shortfall(j), 1.0),
        (ParamTag.holding(j, k), share_rate),
        (ParamTag.asset_purchase(k), 1.0),
    )
    m = system.m
    dq_total = np.zeros(m)
    dq_bar_total = np.zeros(m)
    d_gamma_total = np.zeros(m)
    for tag, weight in tags_and_weights:
        part = response.solve(tag)
        dq_total += weight * part.dq
        dq_bar_total += weight * part.dq_bar
        d_gamma_total += weight * response.gamma_row_response(j, tag, part)
    gamma_j = clearing.gamma[j]
    rest = system.banks[j].s - gamma_j
    value = (
        float(dq_bar_total @ gamma_j)
        + float(dq_total @ rest)
        + float((q_bar - q) @ d_gamma_total)
        - (1.0 - q[k] / q_bar[k])
    )
    subject = f"{system.banks[j].name}->asset {k}"
    return PolicyReport("IPB", subject, value, _bailout_interpretation(value))


def bailout_comparison(
    system: BankingSystem,
    strategy: StrategyLike,
    clearing: Optional[ClearingResult] = None,
) -> str:
    """Diagnostic comparing the best direct and indirect central bailouts.

    Reports which instrument has the larger marginal value; direct support
    of an illiquid bank is conjectured to dominate, but this is logged, not
    asserted.
    """
    clearing = _ensure_clearing(system, strategy, clearing)
    illiquid = [
        i for i, c in enumerate(clearing.classes) if c is SolvencyClass.SOLVENT_ILLIQUID
    ]
    best_icb = max(
        (indirect_central_bailout(system, strategy, k, clearing).value for k in range(system.m)),
        default=float("-inf"),
    )
    if not illiquid:
        return f"no illiquid banks; best ICB = {best_icb:.6g}"
    best_dcb = max(
        direct_central_bailout(system, strategy, i, clearing).value for i in illiquid
    )
    winner = "direct" if best_dcb >= best_icb else "indirect"
    return (
        f"best DCB = {best_dcb:.6g}, best ICB = {best_icb:.6g}: "
        f"{winner} central support has the larger marginal value"
    )
