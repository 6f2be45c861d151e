"""Balance sheets, capital ratios, and solvency classification.

A bank holds liquid assets, non-marketable illiquid assets, and shares of the
marketable illiquid assets, against total liabilities.  The regulator imposes
a minimum ratio of capital to risk-weighted assets.  Given a pair of prices
(MTMP for holdings, VWAP for sales) each bank falls into exactly one of three
classes: it can meet the ratio without selling, it can meet it by selling
part of its marketable book, or it cannot meet it at all.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, UnregulatedBankError
from .market import Market


class SolvencyClass(Enum):
    SOLVENT_LIQUID = "solvent-liquid"
    SOLVENT_ILLIQUID = "solvent-illiquid"
    INSOLVENT = "insolvent"

    def __lt__(self, other: "SolvencyClass") -> bool:
        order = [SolvencyClass.INSOLVENT, SolvencyClass.SOLVENT_ILLIQUID, SolvencyClass.SOLVENT_LIQUID]
        return order.index(self) < order.index(other)


@dataclass(frozen=True)
class Bank:
    """One bank's balance sheet (currency units are abstract).

    Args:
        name: identifier used in reports.
        x: liquid assets.
        ell: non-marketable illiquid assets.
        s: shares held of each marketable asset, length m.
        p_bar: total liabilities.
        alpha_ell: risk-weight of the non-marketable book.
    """

    name: str
    x: float
    ell: float
    s: np.ndarray
    p_bar: float
    alpha_ell: float

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        vals = [self.x, self.ell, self.p_bar, self.alpha_ell, *self.s.tolist()]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ConfigurationError(f"bank {self.name!r}: balance sheet entries must be finite and nonnegative")

    def replace(self, **changes) -> "Bank":
        from dataclasses import replace as _replace

        return _replace(self, **changes)


@dataclass(frozen=True)
class Regulation:
    """Minimum capital ratio and marketable risk-weights."""

    theta_min: float
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if not self.theta_min > 0:
            raise ConfigurationError("theta_min must be positive")
        if np.any(self.alpha < 0):
            raise ConfigurationError("risk-weights must be nonnegative")
        if np.any(self.alpha * self.theta_min >= 1.0):
            bad = np.flatnonzero(self.alpha * self.theta_min >= 1.0).tolist()
            raise ConfigurationError(
                f"alpha_k * theta_min must stay below 1 for every asset (violated at {bad})"
            )

    @property
    def m(self) -> int:
        return self.alpha.size

    def discount(self) -> np.ndarray:
        """Diagonal of I - A*theta_min, the post-requirement value of a held share."""
        return 1.0 - self.alpha * self.theta_min


@dataclass(frozen=True)
class PricePair:
    """Coupled MTMP/VWAP price vectors with q <= q_bar componentwise."""

    q: np.ndarray
    q_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "q_bar", np.asarray(self.q_bar, dtype=float))
        if self.q.shape != self.q_bar.shape:
            raise ConfigurationError("q and q_bar must have the same length")
        if np.any(self.q > self.q_bar + 1e-12):
            raise ConfigurationError("MTMP cannot exceed VWAP")
        if np.any(self.q <= 0) or np.any(self.q_bar > 1.0 + 1e-12):
            raise ConfigurationError("prices must lie in (0, 1]")

    @staticmethod
    def ones(m: int) -> "PricePair":
        return PricePair(np.ones(m), np.ones(m))

    def in_lattice(self, market: Market, tol: float = 1e-9) -> bool:
        """Whether the pair lies in the admissible lattice for this market.

        The lattice is bounded below by the fully liquidated prices
        (F(M), Fbar(M)) and above by 1.
        """
        q_floor, q_bar_floor = market.price_floors()
        return bool(
            np.all(self.q >= q_floor - tol)
            and np.all(self.q_bar >= q_bar_floor - tol)
            and np.all(self.q_bar <= 1.0 + tol)
            and np.all(self.q <= self.q_bar + tol)
        )

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.q, self.q_bar])


@dataclass(frozen=True)
class BankingSystem:
    """Banks, market, and regulation bundled with cross-checked dimensions.

    Construction validates that every bank's holdings match the number of
    assets and that aggregate holdings do not exceed shares outstanding.
    Internal perturbation helpers (finite differencing) pass
    ``validate=False`` to skip the aggregate-holdings check, which a one-sided
    bump of a fully held asset would otherwise trip over.
    """

    banks: Tuple[Bank, ...]
    market: Market
    regulation: Regulation
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        object.__setattr__(self, "banks", tuple(self.banks))
        m = self.market.m
        if self.regulation.m != m:
            raise ConfigurationError("regulation risk-weight vector length must match the asset count")
        for bank in self.banks:
            if bank.s.size != m:
                raise ConfigurationError(f"bank {bank.name!r} holds {bank.s.size} assets, expected {m}")
        if validate:
            total = self.holdings_matrix().sum(axis=0)
            M = self.market.shares_outstanding
            if np.any(total > M * (1 + 1e-9) + 1e-12):
                bad = np.flatnonzero(total > M * (1 + 1e-9) + 1e-12).tolist()
                raise ConfigurationError(
                    f"aggregate holdings exceed shares outstanding for assets {bad}"
                )

    @property
    def n(self) -> int:
        return len(self.banks)

    @property
    def m(self) -> int:
        return self.market.m

    def holdings_matrix(self) -> np.ndarray:
        return np.array([b.s for b in self.banks]) if self.banks else np.zeros((0, self.m))

    def shortfalls(self) -> np.ndarray:
        return np.array([shortfall(b, self.regulation) for b in self.banks])

    def with_banks(self, banks: Sequence[Bank], validate: bool = True) -> "BankingSystem":
        return BankingSystem(tuple(banks), self.market, self.regulation, validate=validate)

    def classify_all(self, prices: PricePair) -> Tuple[SolvencyClass, ...]:
        return tuple(classify(b, self.regulation, prices) for b in self.banks)


def shortfall(bank: Bank, regulation: Regulation) -> float:
    """Liabilities in excess of liquid assets and discounted non-marketables.

    h_i = p_bar - x - (1 - alpha_ell * theta_min) * ell.  This is the amount
    that must be raised by selling marketable assets; negative means the bank
    is comfortably funded.
    """
    return bank.p_bar - bank.x - (1.0 - bank.alpha_ell * regulation.theta_min) * bank.ell


def capital_ratio_initial(bank: Bank, regulation: Regulation) -> float:
    """Capital over risk-weighted assets at unit prices (before any sales)."""
    denom = float(regulation.alpha @ bank.s) + bank.alpha_ell * bank.ell
    if denom <= 0:
        raise UnregulatedBankError(f"bank {bank.name!r} holds no risk-weighted assets")
    capital = bank.x + bank.ell + float(bank.s.sum()) - bank.p_bar
    return capital / denom


def capital_ratio_post(bank: Bank, regulation: Regulation, prices: PricePair, gamma_i: np.ndarray) -> float:
    """Capital ratio after selling gamma_i at VWAP and marking the rest at MTMP."""
    gamma_i = np.asarray(gamma_i, dtype=float)
    if np.any(gamma_i < -1e-12) or np.any(gamma_i > bank.s + 1e-9):
        raise ConfigurationError("liquidation must satisfy 0 <= gamma_i <= s_i")
    rest = bank.s - gamma_i
    denom = float(prices.q @ (regulation.alpha * rest)) + bank.alpha_ell * bank.ell
    if denom <= 0:
        raise UnregulatedBankError(f"bank {bank.name!r} holds no risk-weighted assets at these prices")
    capital = bank.x + bank.ell + float(prices.q_bar @ gamma_i) + float(prices.q @ rest) - bank.p_bar
    return capital / denom


def classify(bank: Bank, regulation: Regulation, prices: PricePair) -> SolvencyClass:
    """Three-way solvency class of a bank at the given prices.

    The class boundaries follow the weak inequalities of the set
    characterizations: h <= q'[I - A*theta]s is solvent and liquid,
    h >= q_bar's is insolvent, strict betweenness is solvent but illiquid.
    A bank with no marketable holdings collapses both thresholds to zero;
    it is then solvent iff its shortfall is nonpositive.
    """
    h = shortfall(bank, regulation)
    if not np.any(bank.s > 0):
        return SolvencyClass.SOLVENT_LIQUID if h <= 0 else SolvencyClass.INSOLVENT
    liquid_threshold = float(prices.q @ (regulation.discount() * bank.s))
    insolvent_threshold = float(prices.q_bar @ bank.s)
    if h >= insolvent_threshold:
        return SolvencyClass.INSOLVENT
    if h <= liquid_threshold:
        return SolvencyClass.SOLVENT_LIQUID
    return SolvencyClass.SOLVENT_ILLIQUID
