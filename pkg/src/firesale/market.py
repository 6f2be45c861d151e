"""Price-impact laws for marketable assets.

Each marketable asset carries an inverse demand function that maps the
aggregate number of shares sold to a quoted price in (0, 1].  Two coupled
prices matter:

* the terminal mark-to-market price (MTMP) ``f_k(gamma)``, at which unsold
  holdings are valued once liquidations stop, and
* the volume weighted average price (VWAP)
  ``fbar_k(gamma) = (1/gamma) * integral of f_k over [0, gamma]``,
  the price actually realized on the shares sold.

Four families are supported: a stepwise limit order book, two power-law
generalizations of the linear impact function, and exponential decay.  The
module also provides the algebra used to certify uniqueness of clearing
prices: a per-asset margin function and the admissible risk-weight interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DomainError, NonDifferentiableFamilyError

ArrayLike = Union[float, np.ndarray]


class DemandFamily(Enum):
    LIMIT_ORDER_BOOK = "limit-order-book"
    POWER_LINEAR = "power-linear"
    POWER_COMPOUND = "power-compound"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class InverseDemand:
    """One asset's price-impact law.

    Args:
        family: which functional family the MTMP follows.
        shares_outstanding: total shares M_k > 0; also the initial market
            capitalization since the undisturbed price is 1.
        a: exponent for the power families (ignored otherwise).
        b: slope / decay parameter (ignored for the limit order book).
        levels: for the limit order book, ordered (price, depth) pairs.  The
            first price must be exactly 1 and prices must strictly decrease.
    """

    family: DemandFamily
    shares_outstanding: float
    a: float = 0.0
    b: float = 0.0
    levels: Tuple[Tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.family, DemandFamily):
            try:
                object.__setattr__(self, "family", DemandFamily(self.family))
            except ValueError as exc:
                raise ConfigurationError(f"unknown demand family {self.family!r}") from exc
        M = self.shares_outstanding
        if not (M > 0 and math.isfinite(M)):
            raise ConfigurationError("shares_outstanding must be positive and finite")
        if self.family is DemandFamily.LIMIT_ORDER_BOOK:
            object.__setattr__(self, "levels", tuple((float(p), float(d)) for p, d in self.levels))
            self._validate_levels()
        elif self.family is DemandFamily.POWER_LINEAR:
            if self.a < 0:
                raise ConfigurationError("power-linear exponent a must be >= 0")
            if not (0 <= self.b < M ** (-self.a)):
                raise ConfigurationError(
                    f"power-linear slope must satisfy 0 <= b < M**-a = {M ** (-self.a):g}"
                )
            if self.a == 0 and self.b > 0:
                # 1 - b*gamma^0 jumps away from 1 at the origin
                raise ConfigurationError("power-linear with a = 0 needs b = 0 to keep f(0) = 1")
        elif self.family is DemandFamily.POWER_COMPOUND:
            if self.b > 1.0 / M:
                raise ConfigurationError(f"power-compound slope must satisfy b <= 1/M = {1.0 / M:g}")
            if self.a * self.b < 0:
                raise ConfigurationError("power-compound requires a*b >= 0")
            if self.a > 0 and self.b == 1.0 / M:
                raise ConfigurationError("power-compound with a > 0 needs b < 1/M so prices stay positive")
        elif self.family is DemandFamily.EXPONENTIAL:
            if self.b < 0:
                raise ConfigurationError("exponential decay must satisfy b >= 0")

    def _validate_levels(self):
        if not self.levels:
            raise ConfigurationError("limit order book needs at least one (price, depth) level")
        prices = [p for p, _ in self.levels]
        depths = [d for _, d in self.levels]
        if prices[0] != 1.0:
            raise ConfigurationError("first limit order book price level must equal 1")
        if any(p <= 0 for p in prices):
            raise ConfigurationError("limit order book prices must be positive")
        if any(b >= a for a, b in zip(prices, prices[1:])):
            raise ConfigurationError("limit order book prices must strictly decrease")
        if any(d <= 0 for d in depths):
            raise ConfigurationError("limit order book depths must be positive")
        if sum(depths) < self.shares_outstanding - 1e-12:
            raise ConfigurationError(
                "limit order book depth must cover the shares outstanding "
                f"(total depth {sum(depths):g} < M = {self.shares_outstanding:g})"
            )

    # Cumulative depth boundaries, starting at 0.  Only meaningful for the
    # limit order book family.
    def _cum_depth(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([d for _, d in self.levels])])

    @property
    def differentiable(self) -> bool:
        return self.family is not DemandFamily.LIMIT_ORDER_BOOK


@dataclass(frozen=True)
class Market:
    """An ordered collection of marketable assets; indices are stable."""

    assets: Tuple[InverseDemand, ...]

    def __init__(self, assets: Sequence[InverseDemand]):
        object.__setattr__(self, "assets", tuple(assets))
        if len(self.assets) < 1:
            raise ConfigurationError("a market needs at least one asset")

    @property
    def m(self) -> int:
        return len(self.assets)

    @property
    def shares_outstanding(self) -> np.ndarray:
        return np.array([a.shares_outstanding for a in self.assets])

    def mtmp(self, gamma: np.ndarray) -> np.ndarray:
        return np.array([mtmp(a, g) for a, g in zip(self.assets, gamma)])

    def vwap(self, gamma: np.ndarray) -> np.ndarray:
        return np.array([vwap(a, g) for a, g in zip(self.assets, gamma)])

    def mtmp_derivative(self, gamma: np.ndarray) -> np.ndarray:
        return np.array([mtmp_derivative(a, g) for a, g in zip(self.assets, gamma)])

    def vwap_derivative(self, gamma: np.ndarray) -> np.ndarray:
        return np.array([vwap_derivative(a, g) for a, g in zip(self.assets, gamma)])

    def price_floors(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lowest attainable (MTMP, VWAP) vectors, reached at full liquidation."""
        M = self.shares_outstanding
        return self.mtmp(M), self.vwap(M)

    @property
    def differentiable(self) -> bool:
        return all(a.differentiable for a in self.assets)


def _check_gamma(asset: InverseDemand, gamma: ArrayLike) -> ArrayLike:
    M = asset.shares_outstanding
    if np.isscalar(gamma) or getattr(gamma, "ndim", 0) == 0:
        # scalar fast path; the solvers call the curves once per asset
        g = float(gamma)
        if g < -1e-15 or g > M * (1 + 1e-12) + 1e-15:
            raise DomainError(f"gamma must lie in [0, {M:g}], got {gamma!r}")
        return min(max(g, 0.0), M)
    g = np.asarray(gamma, dtype=float)
    if np.any(g < -1e-15) or np.any(g > M * (1 + 1e-12) + 1e-15):
        raise DomainError(f"gamma must lie in [0, {M:g}], got {gamma!r}")
    return np.clip(g, 0.0, M)


def _as_scalar(value: np.ndarray, template) -> ArrayLike:
    if np.isscalar(template) or getattr(template, "ndim", 0) == 0:
        return float(value)
    return value


def mtmp(asset: InverseDemand, gamma: ArrayLike) -> ArrayLike:
    """Terminal mark-to-market price f_k(gamma) for aggregate sales gamma."""
    return _as_scalar(_mtmp_raw(asset, _check_gamma(asset, gamma)), gamma)


def _mtmp_raw(asset: InverseDemand, g):
    fam = asset.family
    if fam is DemandFamily.LIMIT_ORDER_BOOK:
        cum = asset._cum_depth()
        prices = np.array([p for p, _ in asset.levels])
        # half-open intervals [cum[j], cum[j+1]); the top of the book is
        # treated as closed so gamma = total depth still quotes a price
        idx = np.minimum(np.searchsorted(cum, g, side="right") - 1, len(prices) - 1)
        out = prices[idx]
    elif fam is DemandFamily.POWER_LINEAR:
        out = 1.0 - asset.b * np.power(g, asset.a)
        out = np.where(g == 0.0, 1.0, out)
    elif fam is DemandFamily.POWER_COMPOUND:
        out = np.power(1.0 - asset.b * g, asset.a)
    else:
        out = np.exp(-asset.b * g)
    return out


def vwap(asset: InverseDemand, gamma: ArrayLike) -> ArrayLike:
    """Volume weighted average price fbar_k(gamma), with fbar(0) = 1.

    Uses the analytic antiderivative of the family rather than quadrature.
    """
    return _as_scalar(_vwap_raw(asset, _check_gamma(asset, gamma)), gamma)


def _vwap_raw(asset: InverseDemand, g):
    fam = asset.family
    if fam is DemandFamily.LIMIT_ORDER_BOOK:
        cum = asset._cum_depth()
        prices = np.array([p for p, _ in asset.levels])
        gg = np.atleast_1d(g)
        # value sold through each level: price * clip(gamma - lower, 0, depth)
        filled = np.clip(gg[:, None] - cum[None, :-1], 0.0, np.diff(cum)[None, :])
        total = filled @ prices
        out = np.where(gg > 0, np.divide(total, gg, out=np.ones_like(gg), where=gg > 0), 1.0)
        out = out.reshape(np.shape(g))
    elif fam is DemandFamily.POWER_LINEAR:
        out = 1.0 - asset.b / (1.0 + asset.a) * np.power(g, asset.a)
        out = np.where(g == 0.0, 1.0, out)
    elif fam is DemandFamily.POWER_COMPOUND:
        # bg == 0 covers both gamma = 0 and underflow of b*gamma; the price
        # is constant at 1 over the whole fill in either case
        bg = asset.b * g
        pos = bg != 0.0
        safe = np.where(pos, bg, 1.0)
        if asset.b == 0:
            out = np.ones_like(g)
        elif asset.a == -1.0:
            out = np.where(pos, -np.log1p(-np.where(pos, bg, 0.0)) / safe, 1.0)
        else:
            # -expm1(c*log1p(-bg)) = 1 - (1-bg)^c without the cancellation
            # that the naive power form suffers for small bg
            c = 1.0 + asset.a
            num = -np.expm1(c * np.log1p(-np.where(pos, bg, 0.0)))
            out = np.where(pos, num / (c * safe), 1.0)
    else:
        bg = asset.b * g
        pos = bg != 0.0
        safe = np.where(pos, bg, 1.0)
        out = np.where(pos, -np.expm1(-safe) / safe, 1.0)
    return out


def mtmp_derivative(asset: InverseDemand, gamma: ArrayLike) -> ArrayLike:
    """Slope f_k'(gamma) of the MTMP; defined for differentiable families."""
    if not asset.differentiable:
        raise NonDifferentiableFamilyError("limit order book MTMP has no derivative")
    return _as_scalar(_mtmp_derivative_raw(asset, _check_gamma(asset, gamma)), gamma)


def _mtmp_derivative_raw(asset: InverseDemand, g):
    fam = asset.family
    if fam is DemandFamily.POWER_LINEAR:
        a, b = asset.a, asset.b
        if a == 1.0:
            out = np.full_like(g, -b)
        else:
            interior = g > 0
            out = -a * b * np.power(g, a - 1.0, where=interior, out=np.zeros_like(g))
            if b > 0:
                at0 = -np.inf if a < 1 else 0.0
            else:
                at0 = 0.0
            out = np.where(interior, out, at0)
    elif fam is DemandFamily.POWER_COMPOUND:
        out = -asset.a * asset.b * np.power(1.0 - asset.b * g, asset.a - 1.0)
    else:
        out = -asset.b * np.exp(-asset.b * g)
    return out


def vwap_derivative(asset: InverseDemand, gamma: ArrayLike) -> ArrayLike:
    """Slope fbar_k'(gamma) of the VWAP.

    Because gamma * fbar(gamma) integrates the MTMP, the derivative has the
    exact form (f(gamma) - fbar(gamma)) / gamma, with limit f'(0)/2 at zero.
    """
    if not asset.differentiable:
        raise NonDifferentiableFamilyError("limit order book VWAP has no derivative")
    g = _check_gamma(asset, gamma)
    pos = g > 0
    f = np.asarray(_mtmp_raw(asset, g))
    fbar = np.asarray(_vwap_raw(asset, g))
    fprime0 = _mtmp_derivative_raw(asset, 0.0)
    out = np.where(pos, np.divide(f - fbar, g, out=np.zeros_like(np.asarray(g, dtype=float)), where=pos), 0.5 * fprime0)
    return _as_scalar(out, gamma)


def uniqueness_margin(
    asset: InverseDemand,
    alpha_k: float,
    theta_min: float,
    grid_points: int = 1001,
) -> float:
    """Minimum of g'(gamma) = a*t*f(gamma) + (1-a*t)*f'(gamma)*(M-gamma).

    A strictly positive minimum over [0, M_k] certifies that this asset's
    contribution to the uniqueness map is strictly increasing, which is the
    per-asset ingredient of the clearing-price uniqueness condition.  The
    margin is evaluated on a uniform grid; the function is smooth for the
    differentiable families so a fine grid suffices.
    """
    at = alpha_k * theta_min
    if at >= 1.0:
        raise ConfigurationError(
            f"requires alpha_k * theta_min < 1 for every asset (got {at:g})"
        )
    if not asset.differentiable:
        raise NonDifferentiableFamilyError("uniqueness margin needs a differentiable family")
    M = asset.shares_outstanding
    grid = np.linspace(0.0, M, grid_points)
    f = np.asarray(mtmp(asset, grid))
    fp = np.asarray(mtmp_derivative(asset, grid))
    with np.errstate(invalid="ignore"):
        margin = at * f + (1.0 - at) * fp * (M - grid)
    # -inf * 0 at the right endpoint can only arise for power-linear a < 1,
    # whose slope already diverges at the origin; the margin is -inf there
    margin = np.where(np.isnan(margin), -np.inf, margin)
    return float(margin.min())


@dataclass(frozen=True)
class RiskWeightInterval:
    """Open interval of risk-weights for which uniqueness is guaranteed."""

    lower: float
    upper: float

    @property
    def empty(self) -> bool:
        return not (self.lower < self.upper)

    def contains(self, alpha_k: float) -> bool:
        return self.lower < alpha_k < self.upper


def risk_weight_interval(asset: InverseDemand, theta_min: float) -> Optional[RiskWeightInterval]:
    """Admissible open risk-weight interval (1/t) * (-Mf'(0)/(1-Mf'(0)), 1).

    Returns None when the closed-form bound does not apply: the limit order
    book is not differentiable, and the power-linear family with exponent
    above 1 fails the monotonicity premise behind the bound (use
    ``uniqueness_margin`` directly in that case).  A power-linear exponent
    below 1 has unbounded slope at the origin, collapsing the interval to
    the empty set.
    """
    if not asset.differentiable:
        return None
    upper = 1.0 / theta_min
    if asset.b == 0:
        return RiskWeightInterval(0.0, upper)
    if asset.family is DemandFamily.POWER_LINEAR:
        if asset.a < 1:
            return RiskWeightInterval(upper, upper)
        if asset.a > 1:
            return None
    slope0 = -mtmp_derivative(asset, 0.0)  # = b, ab, or b per family
    M = asset.shares_outstanding
    lower = upper * (slope0 * M) / (1.0 + slope0 * M)
    return RiskWeightInterval(lower, upper)
