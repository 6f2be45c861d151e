"""Build banking systems from aggregate balance-sheet data.

Public filings report only totals per bank: marketable value, marketable
risk-weighted assets, and the non-marketable analogues.  This module
recovers a full system from those totals: a minimum-norm split of the
marketable book across the risk-weight buckets, the implied non-marketable
risk-weight, and a liquidity parameter per asset chosen so the calibrated
system has a provably unique clearing solution.  A stress shock (haircut
on non-marketable assets, optional risk-weight overrides) is applied after
calibration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .banking import Bank, BankingSystem, Regulation
from .errors import CalibrationError
from .market import DemandFamily, InverseDemand, Market

_EQUALITY_TOL = 1e-10


@dataclass(frozen=True)
class AggregateBankRecord:
    """One bank's published aggregates, all in the same currency unit."""

    name: str
    capital: float
    liquid: float
    marketable_value: float
    nonmarketable_value: float
    marketable_rwa: float
    nonmarketable_rwa: float

    def __post_init__(self):
        for field_name in (
            "capital", "liquid", "marketable_value", "nonmarketable_value",
            "marketable_rwa", "nonmarketable_rwa",
        ):
            value = getattr(self, field_name)
            if not np.isfinite(value) or value < 0:
                raise CalibrationError(f"{self.name}: {field_name} must be finite and nonnegative")
        if self.implied_liabilities < 0:
            raise CalibrationError(f"{self.name}: capital exceeds total assets")

    @property
    def total_assets(self) -> float:
        return self.liquid + self.marketable_value + self.nonmarketable_value

    @property
    def implied_liabilities(self) -> float:
        return self.total_assets - self.capital


@dataclass(frozen=True)
class Shock:
    """Stress applied after calibration.

    nonmarketable_factor multiplies every bank's non-marketable book (a 5%
    writedown is factor 0.95); a per-bank mapping by name is accepted.
    alpha_overrides replaces individual marketable risk-weights, e.g. a
    credit downgrade.
    """

    nonmarketable_factor: Union[float, Mapping[str, float]] = 1.0
    alpha_overrides: Optional[Mapping[int, float]] = None

    def __post_init__(self):
        for value in self._factors():
            if not (0.0 <= value <= 1.0):
                raise CalibrationError("shock factor must lie in [0, 1]")

    def _factors(self) -> Iterable[float]:
        if isinstance(self.nonmarketable_factor, Mapping):
            return self.nonmarketable_factor.values()
        return (self.nonmarketable_factor,)

    def factor_for(self, name: str) -> float:
        if isinstance(self.nonmarketable_factor, Mapping):
            return float(self.nonmarketable_factor.get(name, 1.0))
        return float(self.nonmarketable_factor)


def min_norm_portfolio(total_value: float, total_rwa: float, alpha: np.ndarray) -> np.ndarray:
    """Smallest-norm holdings matching a value and an RWA total.

    minimize ||s||_2  subject to  1's = V,  alpha's = R,  s >= 0.

    On the free components the optimum is affine in the risk-weight,
    s_k = c1 + c2 alpha_k, with (c1, c2) solving a 2x2 Gram system;
    components driven negative are pinned to zero one at a time and a pinned
    component is released again if its multiplier comes out with the wrong
    sign.  Finite because each active set is visited at most once.
    """
    alpha = np.asarray(alpha, dtype=float)
    m = alpha.size
    V, R = float(total_value), float(total_rwa)
    if V < 0:
        raise CalibrationError("total value must be nonnegative")
    if V == 0.0:
        if abs(R) > _EQUALITY_TOL:
            raise CalibrationError("zero value cannot carry nonzero risk-weighted assets")
        return np.zeros(m)
    ratio = R / V
    if ratio < alpha.min() - 1e-12 or ratio > alpha.max() + 1e-12:
        raise CalibrationError(
            f"infeasible aggregates: RWA/value = {ratio:.6g} outside the risk-weight "
            f"range [{alpha.min():.6g}, {alpha.max():.6g}]"
        )
    free = np.ones(m, dtype=bool)
    for _ in range(4 * m + 4):
        af = alpha[free]
        gram = np.array([[float(free.sum()), af.sum()], [af.sum(), float(af @ af)]])
        coeffs, *_ = np.linalg.lstsq(gram, np.array([V, R]), rcond=None)
        candidate = coeffs[0] + coeffs[1] * alpha
        s = np.where(free, candidate, 0.0)
        negative = free & (s < -1e-12)
        if negative.any():
            worst = np.argmin(np.where(negative, s, np.inf))
            free[worst] = False
            continue
        released = (~free) & (candidate > 1e-9)
        if released.any():
            free[np.argmax(np.where(released, candidate, -np.inf))] = True
            continue
        s = np.maximum(s, 0.0)
        scale = max(abs(V), abs(R), 1.0)
        if abs(s.sum() - V) > _EQUALITY_TOL * scale or abs(alpha @ s - R) > _EQUALITY_TOL * scale:
            raise CalibrationError("minimum-norm split failed to satisfy the aggregate constraints")
        return s
    raise CalibrationError("active-set iteration for the portfolio split did not terminate")


def nonmarketable_risk_weight(rwa_nm: float, ell: float) -> float:
    """Implied risk-weight of the non-marketable book, rwa / value."""
    if ell < 0 or rwa_nm < 0:
        raise CalibrationError("non-marketable aggregates must be nonnegative")
    if ell == 0.0:
        if rwa_nm > 0.0:
            raise CalibrationError("non-marketable RWA without non-marketable assets")
        return 0.0
    return rwa_nm / ell


def liquidity_param(alpha_k: float, theta_min: float, M_k: float) -> float:
    """Price-impact slope b_k = 4 alpha_k theta / (5 (1 - alpha_k theta) M_k).

    Sized at 80% of the largest slope compatible with a unique clearing
    price for a linear-impact asset, so calibrated systems certify by
    construction.
    """
    product = alpha_k * theta_min
    if product >= 1.0:
        raise CalibrationError(
            f"risk-weight {alpha_k} times threshold {theta_min} must stay below one"
        )
    if M_k <= 0:
        raise CalibrationError("shares outstanding must be positive")
    if alpha_k == 0.0:
        return 0.0
    return 4.0 * product / (5.0 * (1.0 - product) * M_k)


def build_ccar_system(
    records: Sequence[AggregateBankRecord],
    riskweights: np.ndarray,
    theta_min: float,
    shock: Optional[Shock] = None,
) -> BankingSystem:
    """Assemble a full banking system from aggregate records.

    Per bank: the implied non-marketable risk-weight, the minimum-norm
    marketable split across the risk-weight buckets, and liabilities as
    total assets minus capital.  The market holds exactly what the banks
    hold (M_k is the column sum), which pins down each b_k; a bucket no
    bank uses is kept as an inert unit-supply asset with zero impact so
    asset indices still line up with the risk-weight table.
    """
    if not records:
        raise CalibrationError("at least one bank record is required")
    alpha = np.asarray(riskweights, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise CalibrationError("risk-weights must be a non-empty vector")
    if np.any(alpha * theta_min >= 1.0):
        raise CalibrationError("every risk-weight times the threshold must stay below one")
    holdings = []
    banks = []
    shock = shock or Shock()
    for record in records:
        try:
            alpha_ell = nonmarketable_risk_weight(record.nonmarketable_rwa, record.nonmarketable_value)
            s_i = min_norm_portfolio(record.marketable_value, record.marketable_rwa, alpha)
        except CalibrationError as exc:
            raise CalibrationError(f"{record.name}: {exc}") from exc
        holdings.append(s_i)
        factor = shock.factor_for(record.name)
        banks.append(
            Bank(
                name=record.name,
                x=record.liquid,
                ell=record.nonmarketable_value * factor,
                s=s_i,
                p_bar=record.implied_liabilities,
                alpha_ell=alpha_ell,
            )
        )
    shares = np.sum(holdings, axis=0)
    final_alpha = alpha.copy()
    if shock.alpha_overrides:
        for k, value in shock.alpha_overrides.items():
            if not (0 <= int(k) < alpha.size):
                raise CalibrationError(f"risk-weight override index {k} out of range")
            final_alpha[int(k)] = float(value)
        if np.any(final_alpha * theta_min >= 1.0):
            raise CalibrationError("risk-weight override violates the threshold bound")
    assets = []
    for k in range(alpha.size):
        if shares[k] > 1e-9:
            b_k = liquidity_param(float(final_alpha[k]), theta_min, float(shares[k]))
            assets.append(InverseDemand(DemandFamily.POWER_LINEAR, float(shares[k]), a=1.0, b=b_k))
        else:
            assets.append(InverseDemand(DemandFamily.POWER_LINEAR, 1.0, a=1.0, b=0.0))
    market = Market(assets)
    regulation = Regulation(theta_min=theta_min, alpha=final_alpha)
    return BankingSystem(tuple(banks), market, regulation)


# ---------------------------------------------------------------------------
# Bundled data
# ---------------------------------------------------------------------------


def load_ccar_records(path: Optional[str] = None) -> Tuple[AggregateBankRecord, ...]:
    """Read aggregate bank records from CSV (bundled 2016 data by default)."""
    if path is None:
        source = resources.files("firesale").joinpath("data/ccar_2016.csv")
        text = source.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    records = []
    for row in csv.DictReader(text.splitlines()):
        try:
            records.append(
                AggregateBankRecord(
                    name=row["name"],
                    capital=float(row["capital"]),
                    liquid=float(row["liquid"]),
                    marketable_value=float(row["marketable"]),
                    nonmarketable_value=float(row["nonmarketable"]),
                    marketable_rwa=float(row["marketable_rwa"]),
                    nonmarketable_rwa=float(row["nonmarketable_rwa"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise CalibrationError(f"malformed bank record row {row!r}: {exc}") from exc
    if not records:
        raise CalibrationError("bank record file contains no rows")
    return tuple(records)


def load_riskweights(path: Optional[str] = None) -> np.ndarray:
    """Read the marketable risk-weight buckets (bundled 2016 set by default)."""
    if path is None:
        source = resources.files("firesale").joinpath("data/riskweights_2016.csv")
        text = source.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    values = []
    for row in csv.DictReader(text.splitlines()):
        try:
            values.append(float(row["alpha"]))
        except (KeyError, ValueError) as exc:
            raise CalibrationError(f"malformed risk-weight row {row!r}: {exc}") from exc
    if not values:
        raise CalibrationError("risk-weight file contains no rows")
    return np.asarray(values)
