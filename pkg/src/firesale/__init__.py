"""Fire-sale contagion in banking systems under risk-weighted capital rules.

The package solves for market-clearing asset prices when capital-constrained
banks liquidate marketable holdings, differentiates those prices with respect
to balance-sheet and regulatory parameters, and turns the derivatives into
policy metrics (costs of regulation, bailout values).  ``scenario``,
``service``, and ``cli`` wrap the core in files, HTTP, and a terminal client.
"""

from .banking import (
    Bank,
    BankingSystem,
    PricePair,
    Regulation,
    SolvencyClass,
    capital_ratio_initial,
    capital_ratio_post,
    classify,
    shortfall,
)
from .calibration import (
    AggregateBankRecord,
    Shock,
    build_ccar_system,
    liquidity_param,
    load_ccar_records,
    load_riskweights,
    min_norm_portfolio,
    nonmarketable_risk_weight,
)
from .clearing import (
    ClearingResult,
    Direction,
    UniquenessCertificate,
    UniquenessStatus,
    certify_uniqueness,
    clear_with_purchase,
    monotone_clear,
    picard_clear,
    price_making_clear,
)
from .errors import (
    CalibrationError,
    CaseStudyMismatchError,
    ConfigurationError,
    DomainError,
    FiresaleError,
    InputError,
    KinkError,
    NonConvergenceError,
    NonDifferentiableFamilyError,
    ScenarioError,
    SensitivityError,
    SolverError,
    StrategyContractError,
    UnregulatedBankError,
)
from .liquidation import (
    BoundaryWarning,
    ParamTag,
    PriceTakingEquilibrium,
    Proportional,
    RealizedLossUtility,
    SingleAsset,
    UtilityMax,
    aggregate,
    boundary_banks,
    liquidate,
    verify_mlc,
)
from .market import (
    DemandFamily,
    InverseDemand,
    Market,
    RiskWeightInterval,
    mtmp,
    mtmp_derivative,
    risk_weight_interval,
    uniqueness_margin,
    vwap,
    vwap_derivative,
)
from .policy import (
    PolicyReport,
    bailout_comparison,
    cost_regulation_market,
    cost_regulation_mtm,
    cost_regulation_realized,
    direct_central_bailout,
    direct_private_bailout,
    indirect_central_bailout,
    indirect_private_bailout,
)
from .scenario import (
    CASE_STUDY_NAMES,
    CaseStudyReport,
    ScenarioConfig,
    SweepSpec,
    Table,
    build_system,
    bundled_scenario_path,
    clear_scenario,
    diversification_system,
    emit_scenario,
    load_scenario,
    resolve_strategy,
    run_case_study,
    sweep,
)
from .sensitivity import (
    LinearResponse,
    SensitivityResult,
    finite_difference_check,
    parallel_riskweight_impact,
    price_sensitivity,
)

__version__ = "1.0.0"

__all__ = [
    "Bank",
    "BankingSystem",
    "PricePair",
    "Regulation",
    "SolvencyClass",
    "capital_ratio_initial",
    "capital_ratio_post",
    "classify",
    "shortfall",
    "AggregateBankRecord",
    "Shock",
    "build_ccar_system",
    "liquidity_param",
    "load_ccar_records",
    "load_riskweights",
    "min_norm_portfolio",
    "nonmarketable_risk_weight",
    "ClearingResult",
    "Direction",
    "UniquenessCertificate",
    "UniquenessStatus",
    "certify_uniqueness",
    "clear_with_purchase",
    "monotone_clear",
    "picard_clear",
    "price_making_clear",
    "CalibrationError",
    "CaseStudyMismatchError",
    "ConfigurationError",
    "DomainError",
    "FiresaleError",
    "InputError",
    "KinkError",
    "NonConvergenceError",
    "NonDifferentiableFamilyError",
    "ScenarioError",
    "SensitivityError",
    "SolverError",
    "StrategyContractError",
    "UnregulatedBankError",
    "BoundaryWarning",
    "ParamTag",
    "PriceTakingEquilibrium",
    "Proportional",
    "RealizedLossUtility",
    "SingleAsset",
    "UtilityMax",
    "aggregate",
    "boundary_banks",
    "liquidate",
    "verify_mlc",
    "DemandFamily",
    "InverseDemand",
    "Market",
    "RiskWeightInterval",
    "mtmp",
    "mtmp_derivative",
    "risk_weight_interval",
    "uniqueness_margin",
    "vwap",
    "vwap_derivative",
    "PolicyReport",
    "bailout_comparison",
    "cost_regulation_market",
    "cost_regulation_mtm",
    "cost_regulation_realized",
    "direct_central_bailout",
    "direct_private_bailout",
    "indirect_central_bailout",
    "indirect_private_bailout",
    "CASE_STUDY_NAMES",
    "CaseStudyReport",
    "ScenarioConfig",
    "SweepSpec",
    "Table",
    "build_system",
    "bundled_scenario_path",
    "clear_scenario",
    "diversification_system",
    "emit_scenario",
    "load_scenario",
    "resolve_strategy",
    "run_case_study",
    "sweep",
    "LinearResponse",
    "SensitivityResult",
    "finite_difference_check",
    "parallel_riskweight_impact",
    "price_sensitivity",
]
