"""Shared builders for the test suite.

The two-bank single-asset system has closed-form clearing prices, which
makes it the workhorse oracle for clearing, sensitivity, and policy tests.
The random-system helpers are used by the property suites and the
acceptance harness; they draw mild price-impact parameters so that most
draws are certifiably unique and converge quickly.
"""

import numpy as np
import pytest

from firesale.banking import Bank, BankingSystem, Regulation
from firesale.clearing import UniquenessStatus, certify_uniqueness
from firesale.market import InverseDemand, Market


def two_bank_system(b: float) -> BankingSystem:
    """Two banks, one power-linear asset, unit holdings.

    Shortfalls are 0.9 and 0.6 (liabilities only, no liquid or
    non-marketable assets), theta_min = 0.2, alpha = 1.
    """
    market = Market([InverseDemand("power-linear", 2.0, a=1.0, b=b)])
    banks = (
        Bank("bank-1", x=0.0, ell=0.0, s=np.array([1.0]), p_bar=0.9, alpha_ell=1.0),
        Bank("bank-2", x=0.0, ell=0.0, s=np.array([1.0]), p_bar=0.6, alpha_ell=1.0),
    )
    return BankingSystem(banks, market, Regulation(0.2, np.array([1.0])))


@pytest.fixture
def low_impact_system() -> BankingSystem:
    return two_bank_system(0.15)


@pytest.fixture
def high_impact_system() -> BankingSystem:
    return two_bank_system(0.45)


def random_asset(rng: np.random.Generator, mild: bool = True) -> InverseDemand:
    """One differentiable asset with bounded price impact.

    ``mild`` keeps the full-liquidation price above roughly 0.5 so that
    random systems stay well inside the uniqueness region.
    """
    M = float(rng.uniform(0.5, 3.0))
    family = rng.choice(["power-linear", "power-compound", "exponential"])
    scale = 0.5 if mild else 1.0
    if family == "power-linear":
        a = float(rng.uniform(0.6, 1.5))
        b = float(rng.uniform(0.02, 0.45) * scale) * M ** (-a)
        return InverseDemand("power-linear", M, a=a, b=b)
    if family == "power-compound":
        a = float(rng.uniform(0.5, 2.0))
        b = float(rng.uniform(0.02, 0.45) * scale) / M
        return InverseDemand("power-compound", M, a=a, b=b)
    b = float(rng.uniform(0.02, 0.6) * scale) / M
    return InverseDemand("exponential", M, b=b)


def random_system(
    rng: np.random.Generator,
    n_max: int = 6,
    m_max: int = 4,
    mild: bool = True,
) -> BankingSystem:
    """A random banking system with at least one bank under stress."""
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    market = Market([random_asset(rng, mild=mild) for _ in range(m)])
    M = market.shares_outstanding
    theta = float(rng.uniform(0.05, 0.3))
    alpha = rng.uniform(0.2, 0.9 / theta, size=m)
    # split each asset's float across the banks, leaving some slack
    weights = rng.dirichlet(np.ones(n), size=m).T * rng.uniform(0.5, 1.0, size=m)
    regulation = Regulation(theta, alpha)
    banks = []
    for i in range(n):
        s = weights[i] * M
        x = float(rng.uniform(0.0, 0.3))
        ell = float(rng.uniform(0.0, 1.0))
        alpha_ell = float(rng.uniform(0.2, 0.9 / theta))
        # aim the shortfall between "nothing to do" and "hopeless"
        capacity = float(s.sum())
        h = float(rng.uniform(-0.2, 0.9) * max(capacity, 0.1))
        p_bar = h + x + (1.0 - alpha_ell * theta) * ell
        banks.append(Bank(f"bank-{i + 1}", x=x, ell=ell, s=s, p_bar=max(p_bar, 0.0), alpha_ell=alpha_ell))
    return BankingSystem(tuple(banks), market, regulation)


def random_certified_system(
    rng: np.random.Generator,
    n_max: int = 6,
    m_max: int = 4,
    max_tries: int = 200,
) -> BankingSystem:
    """Rejection-sample until the uniqueness certificate is unconditional."""
    for _ in range(max_tries):
        system = random_system(rng, n_max=n_max, m_max=m_max, mild=True)
        if certify_uniqueness(system).status is UniquenessStatus.CERTIFIED_UNIQUE:
            return system
    raise RuntimeError("could not draw a certified-unique system; loosen the sampler")
