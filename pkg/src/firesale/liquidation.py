"""Liquidation strategies and their derivatives.

Given prices (q, q_bar), every bank must satisfy the minimal liquidation
condition: the value raised by its sales, measured net of the regulatory
relief a held share provides, equals its shortfall beyond what the marked
portfolio already covers, capped at everything the bank owns,

    (q_bar - [I - A*theta]q)' gamma_i = (h_i - q'[I - A*theta]s_i)+  /\
                                        (q_bar - [I - A*theta]q)' s_i.

With a single asset that equation pins gamma down.  With several assets the
bank picks a point on the constraint set; this module ships a proportional
rule, a per-bank utility maximizer, and a Nash equilibrium among utility
maximizers at fixed prices.  It also provides the Jacobians of the aggregate
liquidation with respect to prices and model parameters, which the
sensitivity solver consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from .banking import Bank, BankingSystem, PricePair, SolvencyClass
from .errors import ConfigurationError, NonConvergenceError
from .market import Market


class BoundaryWarning(UserWarning):
    """A bank sits numerically on a solvency-class boundary.

    Derivatives of the liquidation function are one-sided there; the
    two-sided numerical value is reported anyway.
    """


# ---------------------------------------------------------------------------
# Utilities for the optimization-based strategies
# ---------------------------------------------------------------------------


class RealizedLossUtility:
    """u_i(gamma_i, other) = -gamma_i' (1 - Fbar(gamma_i + other)).

    The negative of the realized loss from selling below par.  Strictly
    decreasing in gamma_i, and concave for the supported families.
    """

    def value(self, market: Market, gamma_i: np.ndarray, gamma_other: np.ndarray) -> float:
        fbar = market.vwap(gamma_i + gamma_other)
        return -float(gamma_i @ (1.0 - fbar))

    def gradient(self, market: Market, gamma_i: np.ndarray, gamma_other: np.ndarray) -> np.ndarray:
        total = gamma_i + gamma_other
        fbar = market.vwap(total)
        fbar_prime = market.vwap_derivative(total)
        # gamma_i * fbar'(total) tends to 0 as total -> 0 even when the slope
        # diverges there (power-linear a < 1), so guard the untraded assets
        safe_prime = np.where(total > 0.0, fbar_prime, 0.0)
        return -(1.0 - fbar) + gamma_i * safe_prime


@dataclass(frozen=True)
class LiquidationStrategy:
    """Base class; concrete strategies define how illiquid banks sell."""

    #: closed-form strategies are nonincreasing in prices, which the
    #: monotone solvers and the uniqueness certificate rely on
    monotone: bool = field(default=False, init=False, repr=False)

    @property
    def name(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class SingleAsset(LiquidationStrategy):
    """Closed form for markets with one marketable asset."""

    monotone: bool = field(default=True, init=False, repr=False)


@dataclass(frozen=True)
class Proportional(LiquidationStrategy):
    """Sell a common fraction of the whole portfolio."""

    monotone: bool = field(default=True, init=False, repr=False)


@dataclass(frozen=True)
class UtilityMax(LiquidationStrategy):
    """Each bank maximizes a concave utility over its own constraint set.

    The default utility is the negative realized loss.  Banks are solved
    independently; cross-holdings only interact through the prices.
    """

    utility: object = None
    inner_tol: float = 1e-11
    max_inner_iter: int = 10_000

    def resolved_utility(self):
        return self.utility if self.utility is not None else RealizedLossUtility()


@dataclass(frozen=True)
class PriceTakingEquilibrium(LiquidationStrategy):
    """Nash equilibrium among utility maximizers at fixed prices.

    Solved by round-robin best response from zero liquidations, damping the
    update when the round residual stops shrinking.
    """

    utility: object = None
    inner_tol: float = 1e-11
    max_inner_iter: int = 10_000
    max_rounds: int = 5_000

    def resolved_utility(self):
        return self.utility if self.utility is not None else RealizedLossUtility()


StrategyLike = Union[SingleAsset, Proportional, UtilityMax, PriceTakingEquilibrium]


def _net_sale_weights(system: BankingSystem, prices: PricePair) -> np.ndarray:
    """w = q_bar - [I - A*theta]q, the net value raised per share sold."""
    return prices.q_bar - system.regulation.discount() * prices.q


def _targets(system: BankingSystem, prices: PricePair) -> np.ndarray:
    """Right-hand side of the minimal liquidation condition per bank."""
    w = _net_sale_weights(system, prices)
    disc = system.regulation.discount()
    out = np.empty(system.n)
    for i, bank in enumerate(system.banks):
        h = bank.p_bar - bank.x - (1.0 - bank.alpha_ell * system.regulation.theta_min) * bank.ell
        covered = float(prices.q @ (disc * bank.s))
        out[i] = min(max(h - covered, 0.0), float(w @ bank.s))
    return out


def _project_feasible(y: np.ndarray, s: np.ndarray, w: np.ndarray, target: float) -> np.ndarray:
    """Euclidean projection onto {0 <= gamma <= s, w'gamma >= target}.

    The box clip is tried first; if it violates the raised-value floor the
    point is pushed along w onto the hyperplane.  phi(t) = w'clip(y + t*w)
    is piecewise linear and nondecreasing in t, so the crossing is found
    exactly by walking its breakpoints instead of bisecting.
    """
    z = np.clip(y, 0.0, s)
    phi = float(w @ z)
    if phi >= target - 1e-15:
        return z
    pos = w > 0.0
    breaks = np.concatenate((-y[pos] / w[pos], (s[pos] - y[pos]) / w[pos]))
    breaks = np.unique(breaks[breaks > 0.0])
    t_prev = 0.0
    for t in breaks:
        phi_next = float(w @ np.clip(y + t * w, 0.0, s))
        if phi_next >= target:
            # crossing lies in (t_prev, t]; the slope there is the squared
            # weight mass of the components still strictly inside the box
            mid = y + 0.5 * (t_prev + t) * w
            inside = pos & (mid > 0.0) & (mid < s)
            slope = float(w[inside] @ w[inside])
            t_star = t if slope <= 0.0 else min(t, t_prev + (target - phi) / slope)
            return np.clip(y + t_star * w, 0.0, s)
        t_prev, phi = t, phi_next
    return np.clip(y + t_prev * w, 0.0, s)


def _maximize_over_constraint(
    utility,
    market: Market,
    gamma_other: np.ndarray,
    s: np.ndarray,
    w: np.ndarray,
    target: float,
    tol: float,
    max_iter: int,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Projected gradient ascent for one bank's liquidation choice."""
    if target <= 0.0:
        return np.zeros_like(s)
    if target >= float(w @ s) - 1e-15:
        return s.copy()
    gamma = _project_feasible(s.copy() if start is None else start.copy(), s, w, target)
    step = 1.0 / max(float(np.max(np.abs(w))), 1e-12)
    value = utility.value(market, gamma, gamma_other)
    for _ in range(max_iter):
        grad = utility.gradient(market, gamma, gamma_other)
        # backtrack until the projected step improves the utility
        trial_step = step
        for _ in range(60):
            candidate = _project_feasible(gamma + trial_step * grad, s, w, target)
            candidate_value = utility.value(market, candidate, gamma_other)
            if candidate_value >= value - 1e-18:
                break
            trial_step *= 0.5
        move = float(np.max(np.abs(candidate - gamma)))
        gamma, value = candidate, candidate_value
        step = min(trial_step * 2.0, 1e8)
        if move < tol:
            return gamma
    residuals = f"last step {move:.3e}, tolerance {tol:.3e}"
    raise NonConvergenceError(f"utility maximization stalled: {residuals}", residual=move)


# ---------------------------------------------------------------------------
# Strategy evaluation
# ---------------------------------------------------------------------------


def liquidate(
    strategy: StrategyLike,
    system: BankingSystem,
    prices: PricePair,
    initial: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Liquidation matrix Gamma (n x m) at the given prices.

    Every row satisfies the minimal liquidation condition: solvent and
    liquid banks sell nothing, insolvent banks sell everything, and the
    strategy decides how illiquid banks split the required value across
    assets.  ``initial`` optionally warm-starts the iterative strategies.
    """
    n, m = system.n, system.m
    w = _net_sale_weights(system, prices)
    targets = _targets(system, prices)
    S = system.holdings_matrix()
    gamma = np.zeros((n, m))

    if isinstance(strategy, SingleAsset):
        if m != 1:
            raise ConfigurationError("the single-asset closed form requires exactly one marketable asset")
        gamma[:, 0] = np.where(w[0] > 0, targets / w[0], 0.0)
        return np.minimum(gamma, S)

    if isinstance(strategy, Proportional):
        raised_cap = S @ w
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(raised_cap > 0, targets / np.where(raised_cap > 0, raised_cap, 1.0), 0.0)
        return np.clip(rho, 0.0, 1.0)[:, None] * S

    if isinstance(strategy, UtilityMax):
        utility = strategy.resolved_utility()
        zeros = np.zeros(m)
        for i, bank in enumerate(system.banks):
            start = None if initial is None else initial[i]
            gamma[i] = _maximize_over_constraint(
                utility, system.market, zeros, bank.s, w, targets[i],
                strategy.inner_tol, strategy.max_inner_iter, start=start,
            )
        return gamma

    if isinstance(strategy, PriceTakingEquilibrium):
        return _price_taking_equilibrium(strategy, system, prices, w, targets, initial)

    raise ConfigurationError(f"unknown liquidation strategy {strategy!r}")


def _price_taking_equilibrium(
    strategy: PriceTakingEquilibrium,
    system: BankingSystem,
    prices: PricePair,
    w: np.ndarray,
    targets: np.ndarray,
    initial: Optional[np.ndarray],
) -> np.ndarray:
    utility = strategy.resolved_utility()
    n, m = system.n, system.m
    gamma = np.zeros((n, m)) if initial is None else initial.copy()
    prev_residual = np.inf
    damping = 1.0
    for _ in range(strategy.max_rounds):
        residual = 0.0
        for i, bank in enumerate(system.banks):
            others = gamma.sum(axis=0) - gamma[i]
            best = _maximize_over_constraint(
                utility, system.market, others, bank.s, w, targets[i],
                strategy.inner_tol, strategy.max_inner_iter, start=gamma[i],
            )
            if damping < 1.0:
                best = damping * best + (1.0 - damping) * gamma[i]
            residual = max(residual, float(np.max(np.abs(best - gamma[i]))))
            gamma[i] = best
        if residual < 10 * strategy.inner_tol:
            return gamma
        if residual > prev_residual:
            damping = max(0.5 * damping, 0.0625)  # oscillating; slow down
        prev_residual = residual
    raise NonConvergenceError(
        f"best-response iteration did not settle (last round moved {residual:.3e})",
        residual=residual,
    )


def verify_mlc(system: BankingSystem, prices: PricePair, gamma: np.ndarray) -> np.ndarray:
    """Absolute residual of the minimal liquidation condition per bank."""
    gamma = np.asarray(gamma, dtype=float)
    w = _net_sale_weights(system, prices)
    targets = _targets(system, prices)
    return np.abs(gamma @ w - targets)


def aggregate(gamma: np.ndarray) -> np.ndarray:
    """Total shares sold per asset: column sums of the liquidation matrix."""
    return np.asarray(gamma, dtype=float).sum(axis=0)


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamTag:
    """Identifies a scalar model parameter for differentiation.

    kind is one of 'theta', 'alpha', 'shortfall', 'holding', 'purchase';
    bank / asset carry the indices where they apply.
    """

    kind: str
    bank: Optional[int] = None
    asset: Optional[int] = None

    @staticmethod
    def threshold() -> "ParamTag":
        return ParamTag("theta")

    @staticmethod
    def risk_weight(k: int) -> "ParamTag":
        return ParamTag("alpha", asset=k)

    @staticmethod
    def shortfall(i: int) -> "ParamTag":
        return ParamTag("shortfall", bank=i)

    @staticmethod
    def holding(j: int, k: int) -> "ParamTag":
        return ParamTag("holding", bank=j, asset=k)

    @staticmethod
    def asset_purchase(k: int) -> "ParamTag":
        return ParamTag("purchase", asset=k)

    def describe(self) -> str:
        parts = [self.kind]
        if self.bank is not None:
            parts.append(f"bank={self.bank}")
        if self.asset is not None:
            parts.append(f"asset={self.asset}")
        return ":".join(parts)

    def validate(self, n: int, m: int) -> None:
        if self.kind not in {"theta", "alpha", "shortfall", "holding", "purchase"}:
            raise ConfigurationError(f"unknown parameter kind {self.kind!r}")
        if self.kind in {"alpha", "holding", "purchase"}:
            if self.asset is None or not (0 <= self.asset < m):
                raise ConfigurationError(f"asset index out of range for {self.describe()}")
        if self.kind in {"shortfall", "holding"}:
            if self.bank is None or not (0 <= self.bank < n):
                raise ConfigurationError(f"bank index out of range for {self.describe()}")


def boundary_banks(system: BankingSystem, prices: PricePair, tol: float = 1e-9) -> List[int]:
    """Banks within tolerance of a solvency-class boundary at these prices."""
    disc = system.regulation.discount()
    flagged = []
    for i, bank in enumerate(system.banks):
        h = system.shortfalls()[i]
        scale = max(float(prices.q_bar @ bank.s), 1.0)
        liquid_gap = abs(h - float(prices.q @ (disc * bank.s)))
        insolvent_gap = abs(h - float(prices.q_bar @ bank.s))
        if min(liquid_gap, insolvent_gap) < tol * scale:
            flagged.append(i)
    return flagged


def _warn_boundaries(system: BankingSystem, prices: PricePair) -> None:
    flagged = boundary_banks(system, prices)
    if flagged:
        names = [system.banks[i].name for i in flagged]
        warnings.warn(
            f"banks at a solvency-class boundary, derivatives are one-sided: {names}",
            BoundaryWarning,
            stacklevel=3,
        )


def jacobian_rows(strategy: StrategyLike, system: BankingSystem, prices: PricePair) -> np.ndarray:
    """Per-bank Jacobian of gamma_i with respect to (q, q_bar).

    Shape (n, m, 2m): rows of the liquidation matrix differentiated against
    the stacked price vector.  Analytic for the closed-form strategies;
    central finite differences (step 1e-7) otherwise.
    """
    _warn_boundaries(system, prices)
    n, m = system.n, system.m
    out = np.zeros((n, m, 2 * m))
    classes = system.classify_all(prices)
    if isinstance(strategy, (SingleAsset, Proportional)):
        w = _net_sale_weights(system, prices)
        disc = system.regulation.discount()
        h = system.shortfalls()
        gamma = liquidate(strategy, system, prices)
        for i, bank in enumerate(system.banks):
            if classes[i] is not SolvencyClass.SOLVENT_ILLIQUID:
                continue  # locally constant at 0 or s_i
            D = float(w @ bank.s)
            numer = h[i] - float(prices.q @ (disc * bank.s))
            rho = numer / D
            # d rho / dq and d rho / d q_bar from the quotient rule
            drho_dq = -disc * bank.s * (1.0 - rho) / D
            drho_dqbar = -rho * bank.s / D
            out[i, :, :m] = bank.s[:, None] * drho_dq[None, :]
            out[i, :, m:] = bank.s[:, None] * drho_dqbar[None, :]
            if isinstance(strategy, SingleAsset):
                # same algebra with s replaced by the scalar holding; the
                # proportional expressions reduce to it when m = 1, except
                # gamma_i is capped at s_i instead of scaled
                out[i, 0, 0] = -disc[0] * (bank.s[0] - gamma[i, 0]) / w[0]
                out[i, 0, 1] = -gamma[i, 0] / w[0]
        return out
    return _jacobian_rows_fd(strategy, system, prices)


def _jacobian_rows_fd(strategy: StrategyLike, system: BankingSystem, prices: PricePair, step: float = 1e-7) -> np.ndarray:
    n, m = system.n, system.m
    out = np.zeros((n, m, 2 * m))
    base = liquidate(strategy, system, prices)

    def eval_at(q, qb):
        return liquidate(strategy, system, PricePair(q, qb), initial=base)

    for l in range(m):
        for side, idx in ((0, l), (1, m + l)):
            q, qb = prices.q.copy(), prices.q_bar.copy()
            vec = q if side == 0 else qb
            upper_room = (prices.q_bar[l] - prices.q[l]) if side == 0 else (1.0 - prices.q_bar[l])
            lower_room = prices.q[l] if side == 0 else (prices.q_bar[l] - prices.q[l])
            h = step
            if upper_room >= h and lower_room >= h:
                vec[l] += h
                hi = eval_at(q, qb)
                vec[l] -= 2 * h
                lo = eval_at(q, qb)
                out[:, :, idx] = (hi - lo) / (2 * h)
            elif lower_room >= h:
                vec[l] -= h
                lo = eval_at(q, qb)
                out[:, :, idx] = (base - lo) / h
            elif upper_room >= h:
                vec[l] += h
                hi = eval_at(q, qb)
                out[:, :, idx] = (hi - base) / h
            vec[l] = prices.q[l] if side == 0 else prices.q_bar[l]
    return out


def jacobian_aggregate(strategy: StrategyLike, system: BankingSystem, prices: PricePair) -> np.ndarray:
    """Jacobian of the aggregate liquidation, [d Gamma*/dq | d Gamma*/dq_bar]."""
    return jacobian_rows(strategy, system, prices).sum(axis=0)


def _perturbed_system(system: BankingSystem, param: ParamTag, delta: float) -> BankingSystem:
    """A copy of the system with one scalar parameter shifted by delta.

    Shortfall is shifted through the liability side, which enters every
    formula only through h_i.
    """
    reg = system.regulation
    if param.kind == "theta":
        new_reg = replace(reg, theta_min=reg.theta_min + delta)
        return BankingSystem(system.banks, system.market, new_reg, validate=False)
    if param.kind == "alpha":
        alpha = reg.alpha.copy()
        alpha[param.asset] += delta
        new_reg = replace(reg, alpha=alpha)
        return BankingSystem(system.banks, system.market, new_reg, validate=False)
    if param.kind == "shortfall":
        banks = list(system.banks)
        bank = banks[param.bank]
        banks[param.bank] = bank.replace(p_bar=bank.p_bar + delta)
        return system.with_banks(banks, validate=False)
    if param.kind == "holding":
        banks = list(system.banks)
        bank = banks[param.bank]
        s = bank.s.copy()
        s[param.asset] += delta
        banks[param.bank] = bank.replace(s=s)
        return system.with_banks(banks, validate=False)
    raise ConfigurationError(f"cannot perturb parameter {param.describe()!r} at the strategy level")


def param_derivative_rows(
    strategy: StrategyLike,
    system: BankingSystem,
    prices: PricePair,
    param: ParamTag,
) -> np.ndarray:
    """Per-bank partial derivative of gamma_i with respect to one parameter.

    Prices are held fixed; this is the direct channel only.  For the
    threshold the chain rule through every shortfall (dh_i/dtheta =
    alpha_ell_i * ell_i) and through [I - A*theta] is included.
    """
    param.validate(system.n, system.m)
    if param.kind == "purchase":
        # the purchase fund acts on the price map, not on bank behavior
        return np.zeros((system.n, system.m))
    _warn_boundaries(system, prices)
    if not isinstance(strategy, (SingleAsset, Proportional)):
        step = 1e-7
        hi = liquidate(strategy, _perturbed_system(system, param, step), prices)
        lo = liquidate(strategy, _perturbed_system(system, param, -step), prices)
        return (hi - lo) / (2 * step)

    n, m = system.n, system.m
    out = np.zeros((n, m))
    classes = system.classify_all(prices)
    reg = system.regulation
    w = _net_sale_weights(system, prices)
    disc = reg.discount()
    h = system.shortfalls()
    for i, bank in enumerate(system.banks):
        insolvent = classes[i] is SolvencyClass.INSOLVENT
        if param.kind == "holding" and param.bank == i and insolvent:
            out[i, param.asset] = 1.0  # gamma_i = s_i tracks the holding
            continue
        if classes[i] is not SolvencyClass.SOLVENT_ILLIQUID:
            continue
        D = float(w @ bank.s)
        numer = h[i] - float(prices.q @ (disc * bank.s))
        rho = numer / D
        if param.kind == "theta":
            exposure = float(prices.q @ (reg.alpha * bank.s))
            dnumer = bank.alpha_ell * bank.ell + exposure
            ddenom = exposure
            drho = (dnumer - rho * ddenom) / D
            out[i] = bank.s * drho
        elif param.kind == "alpha":
            k = param.asset
            bump = reg.theta_min * prices.q[k] * bank.s[k]
            drho = bump * (1.0 - rho) / D
            out[i] = bank.s * drho
        elif param.kind == "shortfall":
            if param.bank == i:
                out[i] = bank.s / D
        elif param.kind == "holding":
            if param.bank == i:
                k = param.asset
                drho = (-prices.q[k] * disc[k] - rho * w[k]) / D
                out[i] = bank.s * drho
                out[i, k] += rho
    return out


def param_derivative(
    strategy: StrategyLike,
    system: BankingSystem,
    prices: PricePair,
    param: ParamTag,
) -> np.ndarray:
    """Direct partial of the aggregate liquidation w.r.t. one parameter."""
    return param_derivative_rows(strategy, system, prices, param).sum(axis=0)
