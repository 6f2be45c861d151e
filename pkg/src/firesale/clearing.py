"""Fixed-point solvers for clearing prices.

The clearing map sends a price pair to the prices generated by the
liquidations it induces,

    Phi(q, q_bar) = ( F(Gamma' 1), Fbar(Gamma' 1) ),   Gamma = strategy(q, q_bar).

Solvers: plain Picard iteration from par prices, monotone iteration from
either end of the price lattice (greatest and least solutions), a variant
with an external asset-purchase fund, and a price-making Nash equilibrium
where banks internalize their own price impact.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from .banking import BankingSystem, PricePair, SolvencyClass
from .errors import (
    ConfigurationError,
    NonConvergenceError,
    NonDifferentiableFamilyError,
    StrategyContractError,
)
from .liquidation import (
    LiquidationStrategy,
    RealizedLossUtility,
    StrategyLike,
    aggregate,
    liquidate,
)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000


class Direction(Enum):
    GREATEST = "greatest"
    LEAST = "least"


class UniquenessStatus(Enum):
    CERTIFIED_UNIQUE = "certified-unique"
    EXTREMAL_ONLY = "extremal-only"
    UNCHECKED = "unchecked"


@dataclass(frozen=True)
class UniquenessCertificate:
    """Outcome of the sufficient-condition check for a unique clearing price."""

    status: UniquenessStatus
    margins: Optional[Tuple[float, ...]] = None
    reason: str = ""

    def __str__(self) -> str:
        if self.margins is None:
            return f"{self.status.value} ({self.reason})" if self.reason else self.status.value
        margin_text = ", ".join(f"{v:.6g}" for v in self.margins)
        return f"{self.status.value} [margins: {margin_text}]"


@dataclass(frozen=True)
class ClearingResult:
    """A clearing solution: prices, who sold what, and solvency classes."""

    prices: PricePair
    gamma: np.ndarray
    classes: Tuple[SolvencyClass, ...]
    iterations: int
    residual: float
    uniqueness_certificate: UniquenessCertificate

    @property
    def aggregate_liquidation(self) -> np.ndarray:
        return aggregate(self.gamma)

    def market_capitalization(self, system: BankingSystem) -> float:
        """M'q* at the clearing prices."""
        return float(system.market.shares_outstanding @ self.prices.q)


def _coerce_direction(direction) -> Direction:
    if isinstance(direction, Direction):
        return direction
    try:
        return Direction(str(direction).lower())
    except ValueError:
        raise ConfigurationError(f"direction must be 'greatest' or 'least', got {direction!r}") from None


def certify_uniqueness(system: BankingSystem, strategy: Optional[LiquidationStrategy] = None) -> UniquenessCertificate:
    """Check the sufficient condition for a unique clearing price.

    Certification needs every asset's uniqueness margin to be positive and
    the strategy (when given) to be nonincreasing in prices.  When either
    fails, only the greatest and least solutions are guaranteed, which is
    what the monotone solver produces.
    """
    from .market import uniqueness_margin  # local import avoids a cycle at module load

    if strategy is not None and not strategy.monotone:
        return UniquenessCertificate(
            UniquenessStatus.EXTREMAL_ONLY,
            reason=f"{strategy.name} is not monotone in prices",
        )
    if not system.market.differentiable:
        return UniquenessCertificate(
            UniquenessStatus.EXTREMAL_ONLY,
            reason="market contains a non-differentiable (limit-order-book) asset",
        )
    margins = tuple(
        uniqueness_margin(asset, float(system.regulation.alpha[k]), system.regulation.theta_min)
        for k, asset in enumerate(system.market.assets)
    )
    if all(v > 0.0 for v in margins):
        return UniquenessCertificate(UniquenessStatus.CERTIFIED_UNIQUE, margins=margins)
    return UniquenessCertificate(
        UniquenessStatus.EXTREMAL_ONLY,
        margins=margins,
        reason="uniqueness margin is not positive for every asset",
    )


def _apply_map(
    strategy: StrategyLike,
    system: BankingSystem,
    prices: PricePair,
    warm: Optional[np.ndarray],
    beta: Optional[np.ndarray] = None,
) -> Tuple[PricePair, np.ndarray]:
    gamma = liquidate(strategy, system, prices, initial=warm)
    total = aggregate(gamma)
    if beta is not None:
        total = np.maximum(total - beta / prices.q_bar, 0.0)
    new = PricePair(system.market.mtmp(total), system.market.vwap(total))
    if not new.in_lattice(system.market):
        raise StrategyContractError("clearing map left the price lattice")
    return new, gamma


def _class_signature(system: BankingSystem, prices: PricePair) -> Tuple[SolvencyClass, ...]:
    return tuple(system.classify_all(prices))


def _iterate(
    strategy: StrategyLike,
    system: BankingSystem,
    start: PricePair,
    tol: float,
    max_iter: int,
    monotone_direction: Optional[Direction] = None,
    beta: Optional[np.ndarray] = None,
) -> Tuple[PricePair, np.ndarray, int, float]:
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    prices = start
    gamma: Optional[np.ndarray] = None
    classes = _class_signature(system, prices)
    residual = np.inf
    for iteration in range(1, int(max_iter) + 1):
        new_prices, gamma = _apply_map(strategy, system, prices, gamma, beta=beta)
        if monotone_direction is Direction.GREATEST:
            if np.any(new_prices.stacked() > prices.stacked() + 1e-12):
                raise StrategyContractError("iterates increased while seeking the greatest solution")
        elif monotone_direction is Direction.LEAST:
            if np.any(new_prices.stacked() < prices.stacked() - 1e-12):
                raise StrategyContractError("iterates decreased while seeking the least solution")
        residual = float(np.max(np.abs(new_prices.stacked() - prices.stacked())))
        prices = new_prices
        if residual < tol:
            new_classes = _class_signature(system, prices)
            if new_classes != classes:
                # the solvency configuration flipped in the final step;
                # confirm the fixed point is genuine under the new classes
                check, gamma = _apply_map(strategy, system, prices, gamma, beta=beta)
                recheck = float(np.max(np.abs(check.stacked() - prices.stacked())))
                if recheck >= max(10 * tol, 1e-12):
                    classes = new_classes
                    continue
            return prices, gamma, iteration, residual
        classes = _class_signature(system, prices)
    raise NonConvergenceError(
        f"clearing did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
    )


def picard_clear(
    system: BankingSystem,
    strategy: StrategyLike,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClearingResult:
    """Iterate the clearing map from par prices until it stops moving.

    Markets with a limit-order-book asset are routed to the monotone solver:
    plain iteration can cycle across a price jump, while the monotone
    sequence from above always settles.
    """
    if not system.market.differentiable:
        return monotone_clear(system, strategy, Direction.GREATEST, tol=tol, max_iter=max_iter)
    start = PricePair.ones(system.m)
    prices, gamma, iterations, residual = _iterate(strategy, system, start, tol, max_iter)
    certificate = certify_uniqueness(system, strategy)
    return ClearingResult(prices, gamma, _class_signature(system, prices), iterations, residual, certificate)


def monotone_clear(
    system: BankingSystem,
    strategy: StrategyLike,
    direction: Direction = Direction.GREATEST,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClearingResult:
    """Monotone iteration to the greatest or least clearing solution.

    From par prices the iterates decrease to the greatest solution; from the
    fully-liquidated floor (F(M), Fbar(M)) they increase to the least one.
    Requires a strategy that never sells less when prices fall.
    """
    direction = _coerce_direction(direction)
    if not strategy.monotone:
        raise StrategyContractError(
            f"monotone solve requires a price-monotone strategy, got {strategy.name}"
        )
    if direction is Direction.GREATEST:
        start = PricePair.ones(system.m)
    else:
        floor_q, floor_qbar = system.market.price_floors()
        start = PricePair(floor_q, floor_qbar)
    prices, gamma, iterations, residual = _iterate(
        strategy, system, start, tol, max_iter, monotone_direction=direction
    )
    certificate = certify_uniqueness(system, strategy)
    return ClearingResult(prices, gamma, _class_signature(system, prices), iterations, residual, certificate)


def clear_with_purchase(
    system: BankingSystem,
    strategy: StrategyLike,
    beta: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClearingResult:
    """Clearing with an outside fund buying beta_k of value in asset k.

    The fund's purchases offset fire sales share for share, so the price
    map sees [Gamma'1 - beta/q_bar]+ instead of the raw aggregate.  With
    beta = 0 this is exactly the plain Picard solve.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (system.m,):
        raise ConfigurationError(f"beta must have one entry per asset, expected {system.m}")
    if np.any(beta < 0):
        raise ConfigurationError("purchase funds must be nonnegative")
    start = PricePair.ones(system.m)
    prices, gamma, iterations, residual = _iterate(strategy, system, start, tol, max_iter, beta=beta)
    certificate = UniquenessCertificate(UniquenessStatus.UNCHECKED, reason="asset-purchase map")
    return ClearingResult(prices, gamma, _class_signature(system, prices), iterations, residual, certificate)


# ---------------------------------------------------------------------------
# Price-making equilibrium
# ---------------------------------------------------------------------------


def _price_making_constraint(system: BankingSystem, bank_index: int, gamma_other: np.ndarray):
    """Constraint g_i(gamma) >= 0 defining the price-aware feasible set.

    g_i(gamma) = (Fbar(T) - B F(T))' gamma
                 - min( (h_i - F(T)' B s_i)+ , (Fbar(T) - B F(T))' s_i ),
    with T = gamma + gamma_other.  The bank must raise its shortfall at the
    prices its own sales produce, capped at liquidating everything.
    """
    bank = system.banks[bank_index]
    disc = system.regulation.discount()
    h = system.shortfalls()[bank_index]
    market = system.market

    def value(gamma: np.ndarray) -> float:
        total = gamma + gamma_other
        f = market.mtmp(total)
        fbar = market.vwap(total)
        w = fbar - disc * f
        need = h - float(f @ (disc * bank.s))
        return float(w @ gamma) - min(max(need, 0.0), float(w @ bank.s))

    def jacobian(gamma: np.ndarray) -> np.ndarray:
        total = gamma + gamma_other
        f = market.mtmp(total)
        fbar = market.vwap(total)
        fp = market.mtmp_derivative(total)
        fbarp = market.vwap_derivative(total)
        w = fbar - disc * f
        grad = w + gamma * (fbarp - disc * fp)
        need = h - float(f @ (disc * bank.s))
        cap = float(w @ bank.s)
        if need <= 0.0:
            return grad
        if need <= cap:
            return grad + fp * disc * bank.s
        return grad - (fbarp - disc * fp) * bank.s
    return value, jacobian


def _best_response_price_making(
    system: BankingSystem,
    bank_index: int,
    gamma_other: np.ndarray,
    utility,
    start: np.ndarray,
) -> np.ndarray:
    bank = system.banks[bank_index]
    s = bank.s
    market = system.market
    g_val, g_jac = _price_making_constraint(system, bank_index, gamma_other)
    if g_val(np.zeros_like(s)) >= 0.0:
        return np.zeros_like(s)  # nothing to raise; selling only loses value

    def objective(gamma: np.ndarray) -> float:
        return -utility.value(market, gamma, gamma_other)

    def gradient(gamma: np.ndarray) -> np.ndarray:
        return -utility.gradient(market, gamma, gamma_other)

    bounds = [(0.0, float(si)) for si in s]
    constraint = {"type": "ineq", "fun": g_val, "jac": g_jac}
    best = None
    for guess in (start, 0.5 * s, s):
        res = scipy.optimize.minimize(
            objective, np.clip(guess, 0.0, s), jac=gradient, bounds=bounds,
            constraints=[constraint], method="SLSQP",
            options={"maxiter": 400, "ftol": 1e-14},
        )
        if g_val(res.x) >= -1e-9:
            if best is None or objective(res.x) < objective(best):
                best = np.clip(res.x, 0.0, s)
    if best is None:
        # everything the bank owns is always feasible
        return s.copy()
    return best


def price_making_clear(
    system: BankingSystem,
    utilities: Optional[Sequence] = None,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> ClearingResult:
    """Nash equilibrium where each bank prices in its own market impact.

    Simultaneous best responses on the liquidation matrix starting from no
    sales; the clearing prices are read off the equilibrium aggregate.
    Convergence is not guaranteed in general, so the failure diagnostic
    carries the recent residual history.
    """
    if not system.market.differentiable:
        raise NonDifferentiableFamilyError(
            "price-making equilibrium needs differentiable inverse demand"
        )
    n, m = system.n, system.m
    if utilities is None:
        utilities = [RealizedLossUtility()] * n
    if len(utilities) != n:
        raise ConfigurationError(f"expected one utility per bank ({n}), got {len(utilities)}")
    gamma = np.zeros((n, m))
    damping = 1.0
    trace = []
    for iteration in range(1, int(max_iter) + 1):
        proposals = np.empty_like(gamma)
        for i in range(n):
            others = gamma.sum(axis=0) - gamma[i]
            proposals[i] = _best_response_price_making(system, i, others, utilities[i], gamma[i])
        if damping < 1.0:
            proposals = damping * proposals + (1.0 - damping) * gamma
        residual = float(np.max(np.abs(proposals - gamma)))
        gamma = proposals
        trace.append(residual)
        if residual < tol:
            break
        if len(trace) >= 2 and trace[-1] > trace[-2]:
            damping = max(0.5 * damping, 0.0625)
    else:
        recent = ", ".join(f"{r:.2e}" for r in trace[-8:])
        raise NonConvergenceError(
            f"best responses kept moving after {max_iter} rounds; residual trace [{recent}]",
            residual=trace[-1],
        )
    total = aggregate(gamma)
    prices = PricePair(system.market.mtmp(total), system.market.vwap(total))
    certificate = UniquenessCertificate(UniquenessStatus.UNCHECKED, reason="price-making equilibrium")
    return ClearingResult(prices, gamma, _class_signature(system, prices), iteration, residual, certificate)
