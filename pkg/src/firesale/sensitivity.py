"""Closed-form sensitivities of clearing prices to model parameters.

Differentiating the fixed point (q*, q_bar*) = Phi(q*, q_bar*) gives a
2m x 2m linear system

    (I - W) [dq; dq_bar] = [diag(F') ; diag(Fbar')] dGamma*/d#,

where W stacks diag(F') and diag(Fbar') against the Jacobian of the
aggregate liquidation in prices.  W is elementwise nonnegative (falling
prices force more selling, which lowers prices further), so (I - W) has a
Leontief inverse exactly when the clearing solution is unique.  A plain
finite-difference re-clearing serves as the validation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .banking import BankingSystem
from .clearing import ClearingResult, clear_with_purchase, picard_clear
from .errors import (
    ConfigurationError,
    KinkError,
    NonDifferentiableFamilyError,
    SensitivityError,
)
from .liquidation import (
    ParamTag,
    StrategyLike,
    _perturbed_system,
    aggregate,
    boundary_banks,
    jacobian_rows,
    param_derivative_rows,
)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class SensitivityResult:
    """Derivative of both clearing price vectors for one parameter."""

    dq: np.ndarray
    dq_bar: np.ndarray
    param: ParamTag
    condition_number: float
    boundary_warnings: Tuple[str, ...] = ()

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.dq, self.dq_bar])


class LinearResponse:
    """Factorized price-feedback system, reusable across parameter tags.

    Assembles W once from the liquidation Jacobian at the clearing point,
    factorizes (I - W), and answers two questions: how do the clearing
    prices move with a parameter, and how does an individual bank's
    liquidation row move once the price feedback is included.
    """

    def __init__(self, system: BankingSystem, strategy: StrategyLike, clearing: ClearingResult):
        if not system.market.differentiable:
            raise NonDifferentiableFamilyError(
                "price sensitivities require differentiable inverse demand"
            )
        self.system = system
        self.strategy = strategy
        self.clearing = clearing
        self.boundary_names = tuple(
            system.banks[i].name for i in boundary_banks(system, clearing.prices)
        )
        total = aggregate(clearing.gamma)
        self._fp = system.market.mtmp_derivative(total)
        self._fbarp = system.market.vwap_derivative(total)
        self._total = total
        self.rows = jacobian_rows(strategy, system, clearing.prices)
        jac = self.rows.sum(axis=0)
        m = system.m
        W = np.vstack([self._fp[:, None] * jac, self._fbarp[:, None] * jac])
        A = np.eye(2 * m) - W
        self.condition_number = float(np.linalg.cond(A))
        if not np.isfinite(self.condition_number) or self.condition_number > CONDITION_LIMIT:
            raise SensitivityError(
                "uniqueness condition violated: (I - W) is numerically singular "
                f"(condition number {self.condition_number:.3e})"
            )
        self._lu = scipy.linalg.lu_factor(A)

    def _rhs(self, param: ParamTag) -> Optional[np.ndarray]:
        """Right-hand side for one tag; None means identically zero."""
        m = self.system.m
        if param.kind == "purchase":
            k = param.asset
            if self._total[k] <= 1e-12:
                # nothing is sold in this asset, so a small fund buys nothing
                return None
            q_bar_k = self.clearing.prices.q_bar[k]
            rhs = np.zeros(2 * m)
            rhs[k] = -self._fp[k] / q_bar_k
            rhs[m + k] = -self._fbarp[k] / q_bar_k
            return rhs
        direct = param_derivative_rows(self.strategy, self.system, self.clearing.prices, param).sum(axis=0)
        return np.concatenate([self._fp * direct, self._fbarp * direct])

    def solve(self, param: ParamTag) -> SensitivityResult:
        param.validate(self.system.n, self.system.m)
        m = self.system.m
        rhs = self._rhs(param)
        if rhs is None:
            sol = np.zeros(2 * m)
        else:
            sol = scipy.linalg.lu_solve(self._lu, rhs)
        if not np.all(np.isfinite(sol)):
            raise SensitivityError(
                f"sensitivity solve produced non-finite entries for {param.describe()}"
            )
        return SensitivityResult(
            sol[:m].copy(), sol[m:].copy(), param, self.condition_number, self.boundary_names
        )

    def gamma_row_response(self, i: int, param: ParamTag, prices_response: SensitivityResult) -> np.ndarray:
        """Total derivative of bank i's liquidation row for one tag.

        Direct channel at fixed prices plus the feedback of the moving
        clearing prices through the bank's own Jacobian.
        """
        direct = param_derivative_rows(self.strategy, self.system, self.clearing.prices, param)[i]
        return direct + self.rows[i] @ prices_response.stacked()


def price_sensitivity(
    system: BankingSystem,
    strategy: StrategyLike,
    clearing: ClearingResult,
    param: ParamTag,
) -> SensitivityResult:
    """Solve the implicit-function system for one parameter tag.

    The asset-purchase tag is evaluated at beta = 0 with its dedicated
    right-hand side; every other tag routes the strategy's direct
    derivative through the price-feedback operator.
    """
    return LinearResponse(system, strategy, clearing).solve(param)


def _clear_for_fd(
    system: BankingSystem,
    strategy: StrategyLike,
    param: ParamTag,
    delta: float,
    tol: float,
    max_iter: int,
) -> ClearingResult:
    if param.kind == "purchase":
        beta = np.zeros(system.m)
        beta[param.asset] = delta
        return clear_with_purchase(system, strategy, beta, tol=tol, max_iter=max_iter)
    return picard_clear(_perturbed_system(system, param, delta), strategy, tol=tol, max_iter=max_iter)


def _param_scale(system: BankingSystem, param: ParamTag) -> float:
    if param.kind == "theta":
        value = system.regulation.theta_min
    elif param.kind == "alpha":
        value = float(system.regulation.alpha[param.asset])
    elif param.kind == "shortfall":
        value = float(system.shortfalls()[param.bank])
    elif param.kind == "holding":
        value = float(system.banks[param.bank].s[param.asset])
    else:
        value = 0.0
    return max(abs(value), 1.0)


def _minus_side_feasible(system: BankingSystem, param: ParamTag, delta: float) -> bool:
    """Whether stepping the parameter down by delta stays in its domain."""
    if param.kind == "theta":
        return system.regulation.theta_min - delta > 0
    if param.kind == "alpha":
        return float(system.regulation.alpha[param.asset]) - delta >= 0
    if param.kind == "shortfall":
        return system.banks[param.bank].p_bar - delta >= 0
    if param.kind == "holding":
        return float(system.banks[param.bank].s[param.asset]) - delta >= 0
    return False  # purchase: beta cannot go negative


def finite_difference_check(
    system: BankingSystem,
    strategy: StrategyLike,
    param: ParamTag,
    step: float = 1e-6,
    tol: float = 1e-13,
    max_iter: int = 100_000,
) -> SensitivityResult:
    """Differentiate the clearing prices by re-clearing at perturbed inputs.

    Central differences, step relative to the parameter scale.  If the
    perturbation flips any bank's solvency class the derivative does not
    exist there and a kink error tells the caller to shrink the step.
    Parameters pinned at a domain boundary (a purchase fund at zero, a
    liability or holding at zero) use a three-point forward stencil of
    comparable accuracy instead.
    """
    param.validate(system.n, system.m)
    if step <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    delta = step * _param_scale(system, param)
    base = picard_clear(system, strategy, tol=tol, max_iter=max_iter)
    names = tuple(system.banks[i].name for i in boundary_banks(system, base.prices))
    if not _minus_side_feasible(system, param, delta):
        plus = _clear_for_fd(system, strategy, param, delta, tol, max_iter)
        plus2 = _clear_for_fd(system, strategy, param, 2 * delta, tol, max_iter)
        if not (base.classes == plus.classes == plus2.classes):
            raise KinkError(
                f"solvency classes changed under a {delta:.3e} perturbation of "
                f"{param.describe()}; use a smaller step"
            )
        deriv = (-3 * base.prices.stacked() + 4 * plus.prices.stacked() - plus2.prices.stacked()) / (2 * delta)
    else:
        plus = _clear_for_fd(system, strategy, param, delta, tol, max_iter)
        minus = _clear_for_fd(system, strategy, param, -delta, tol, max_iter)
        if plus.classes != minus.classes:
            raise KinkError(
                f"solvency classes changed under a +/-{delta:.3e} perturbation of "
                f"{param.describe()}; the derivative is one-sided here, use a smaller step"
            )
        deriv = (plus.prices.stacked() - minus.prices.stacked()) / (2 * delta)
    m = system.m
    return SensitivityResult(deriv[:m].copy(), deriv[m:].copy(), param, float("nan"), names)


def parallel_riskweight_impact(
    system: BankingSystem,
    strategy: StrategyLike,
    clearing: ClearingResult,
) -> float:
    """Market-capitalization response to a uniform risk-weight shift.

    Sum over assets of M' dq*/dalpha_k, sharing one factorization of
    (I - W) across the solves.  Raising any risk-weight can only depress
    prices, so the result is reported as a nonpositive stability check.
    """
    response = LinearResponse(system, strategy, clearing)
    M = system.market.shares_outstanding
    total = 0.0
    for k in range(system.m):
        total += float(M @ response.solve(ParamTag.risk_weight(k)).dq)
    return total
