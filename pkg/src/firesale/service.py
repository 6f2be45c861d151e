"""HTTP facade over the clearing library.

Every computation the command line offers is exposed as a POST endpoint
taking and returning JSON; the CLI is a thin client of this app via an
in-process test transport, so the two surfaces cannot drift apart.  Errors
come back in a uniform envelope carrying the exception type and the exit
code a terminal client should use.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple, Union

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .banking import BankingSystem, SolvencyClass
from .calibration import (
    AggregateBankRecord,
    Shock,
    build_ccar_system,
    load_ccar_records,
    load_riskweights,
)
from .clearing import ClearingResult, picard_clear
from .errors import ConfigurationError, InputError, SolverError
from .liquidation import ParamTag, StrategyLike
from .policy import (
    PolicyReport,
    cost_regulation_market,
    cost_regulation_mtm,
    cost_regulation_realized,
    direct_central_bailout,
    direct_private_bailout,
    indirect_central_bailout,
    indirect_private_bailout,
)
from .scenario import (
    PRICE_MAKING,
    ScenarioConfig,
    SweepSpec,
    run_case_study,
    sweep,
)
from .sensitivity import LinearResponse

__all__ = ["app", "create_app"]


# ---------------------------------------------------------------------------
# request and response schemas


class SolveOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: Optional[str] = None
    tol: Optional[float] = None
    max_iter: Optional[int] = None


class ClearRequest(SolveOptions):
    scenario: ScenarioConfig


class PricesModel(BaseModel):
    q: List[float]
    q_bar: List[float]


class ClearResponse(BaseModel):
    banks: List[str]
    prices: PricesModel
    gamma: List[List[float]]
    classes: List[str]
    iterations: int
    residual: float
    certificate: str
    market_cap: float


class ParamModel(BaseModel):
    """Wire form of a sensitivity parameter tag."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["theta", "alpha", "shortfall", "holding", "purchase"]
    bank: Optional[Union[int, str]] = None
    asset: Optional[int] = None


class SensitivityRequest(SolveOptions):
    scenario: ScenarioConfig
    param: ParamModel


class SensitivityResponse(BaseModel):
    param: str
    dq: List[float]
    dq_bar: List[float]
    condition_number: float
    boundary_warnings: List[str]


class PolicyRequest(SolveOptions):
    scenario: ScenarioConfig
    metric: Literal["all", "cr", "crl", "cmi", "dcb", "dpb", "icb", "ipb"] = "all"
    bank: Optional[Union[int, str]] = None
    source: Optional[Union[int, str]] = None
    asset: Optional[int] = None


class PolicyReportModel(BaseModel):
    metric: str
    subject: str
    value: Optional[float]
    sign_interpretation: str
    applicable: bool = True
    note: str = ""


class PolicyResponse(BaseModel):
    reports: List[PolicyReportModel]


class AggregateRecordModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    capital: float
    liquid: float
    marketable: float
    nonmarketable: float
    marketable_rwa: float
    nonmarketable_rwa: float


class CalibrateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    theta_min: float = 0.08
    #: fractional writedown of the non-marketable books; 0 means calm,
    #: 0.05 is the published stress
    shock: float = 0.0
    alpha_overrides: Dict[int, float] = Field(default_factory=dict)
    records: Optional[List[AggregateRecordModel]] = None
    clear: bool = True
    emit: bool = False


class CalibratedBankModel(BaseModel):
    name: str
    liquid: float
    nonmarketable: float
    liabilities: float
    alpha_nonmarketable: float
    holdings: List[float]


class CalibrateResponse(BaseModel):
    theta_min: float
    risk_weights: List[float]
    shares_outstanding: List[float]
    liquidity_params: List[float]
    banks: List[CalibratedBankModel]
    clearing: Optional[ClearResponse] = None
    scenario: Optional[ScenarioConfig] = None


class CaseStudyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str


class TableModel(BaseModel):
    title: str
    headers: List[str]
    rows: List[List[str]]


class CheckModel(BaseModel):
    description: str
    expected: str
    actual: str
    ok: bool


class CaseStudyResponse(BaseModel):
    name: str
    passed: bool
    checks: List[CheckModel]
    tables: List[TableModel]


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Optional[ScenarioConfig] = None
    parameter: str
    grid: List[float]
    outputs: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# helpers


def _clear(scenario: ScenarioConfig, options: SolveOptions) -> Tuple[BankingSystem, Union[StrategyLike, str], ClearingResult]:
    data = scenario.model_dump()
    if options.tol is not None:
        data["solver"]["tol"] = options.tol
    if options.max_iter is not None:
        data["solver"]["max_iter"] = options.max_iter
    if options.strategy is not None:
        data["strategy"] = options.strategy
    from .scenario import clear_scenario

    return clear_scenario(ScenarioConfig.model_validate(data))


def _clear_response(system: BankingSystem, result: ClearingResult) -> ClearResponse:
    return ClearResponse(
        banks=[bank.name for bank in system.banks],
        prices=PricesModel(q=list(result.prices.q), q_bar=list(result.prices.q_bar)),
        gamma=[list(row) for row in result.gamma],
        classes=[c.value for c in result.classes],
        iterations=result.iterations,
        residual=result.residual,
        certificate=str(result.uniqueness_certificate),
        market_cap=result.market_capitalization(system),
    )


def _bank_index(system: BankingSystem, ref: Union[int, str], field: str) -> int:
    if isinstance(ref, str):
        for i, bank in enumerate(system.banks):
            if bank.name == ref:
                return i
        raise ConfigurationError(f"{field}: no bank named {ref!r}")
    if not 0 <= ref < system.n:
        raise ConfigurationError(f"{field}: bank index {ref} out of range for n={system.n}")
    return int(ref)


def _param_tag(system: BankingSystem, model: ParamModel) -> ParamTag:
    kind = model.kind
    if kind == "theta":
        return ParamTag.threshold()
    if kind == "alpha":
        if model.asset is None:
            raise ConfigurationError("param.asset is required for an alpha sensitivity")
        return ParamTag.risk_weight(model.asset)
    if kind == "shortfall":
        if model.bank is None:
            raise ConfigurationError("param.bank is required for a shortfall sensitivity")
        return ParamTag.shortfall(_bank_index(system, model.bank, "param.bank"))
    if kind == "holding":
        if model.bank is None or model.asset is None:
            raise ConfigurationError("param.bank and param.asset are required for a holding sensitivity")
        return ParamTag.holding(_bank_index(system, model.bank, "param.bank"), model.asset)
    if model.asset is None:
        raise ConfigurationError("param.asset is required for a purchase sensitivity")
    return ParamTag.asset_purchase(model.asset)


def _report_model(
    report: PolicyReport,
    applicable: bool = True,
    note: str = "",
) -> PolicyReportModel:
    return PolicyReportModel(
        metric=report.metric,
        subject=report.subject,
        value=report.value,
        sign_interpretation=report.sign_interpretation,
        applicable=applicable,
        note=note,
    )


def _bailout_applicability(
    result: ClearingResult, system: BankingSystem, i: int
) -> Tuple[bool, str]:
    cls = result.classes[i]
    if cls is SolvencyClass.SOLVENT_ILLIQUID:
        return True, ""
    return (
        False,
        f"not applicable: {system.banks[i].name} is {cls.value} at the clearing "
        "point, so a marginal shortfall transfer does not move any liquidation",
    )


def _policy_reports(
    request: PolicyRequest,
    system: BankingSystem,
    strategy: StrategyLike,
    result: ClearingResult,
) -> List[PolicyReportModel]:
    reports: List[PolicyReportModel] = []
    metric = request.metric

    def each_bank() -> List[int]:
        if request.bank is None:
            return list(range(system.n))
        return [_bank_index(system, request.bank, "bank")]

    def each_asset() -> List[int]:
        if request.asset is None:
            return list(range(system.m))
        return [int(request.asset)]

    if metric in ("all", "cr"):
        reports.append(_report_model(cost_regulation_market(system, strategy, clearing=result)))
    if metric in ("all", "crl"):
        for i in each_bank():
            reports.append(_report_model(cost_regulation_realized(system, strategy, i, clearing=result)))
    if metric in ("all", "cmi"):
        for i in each_bank():
            reports.append(_report_model(cost_regulation_mtm(system, strategy, i, clearing=result)))
    if metric in ("all", "dcb"):
        for i in each_bank():
            applicable, note = _bailout_applicability(result, system, i)
            report = direct_central_bailout(system, strategy, i, clearing=result)
            reports.append(_report_model(report, applicable, note))
    if metric == "dpb":
        if request.source is None:
            raise ConfigurationError("metric dpb needs a source bank (the one paying)")
        j = _bank_index(system, request.source, "source")
        for i in each_bank():
            if i == j:
                continue
            applicable, note = _bailout_applicability(result, system, i)
            report = direct_private_bailout(system, strategy, j, i, clearing=result)
            reports.append(_report_model(report, applicable, note))
    if metric in ("all", "icb"):
        for k in each_asset():
            reports.append(_report_model(indirect_central_bailout(system, strategy, k, clearing=result)))
    if metric == "ipb":
        if request.source is None:
            raise ConfigurationError("metric ipb needs a source bank (the one buying)")
        j = _bank_index(system, request.source, "source")
        for k in each_asset():
            reports.append(_report_model(indirect_private_bailout(system, strategy, j, k, clearing=result)))
    return reports


# ---------------------------------------------------------------------------
# application


def create_app() -> FastAPI:
    app = FastAPI(
        title="firesale clearing service",
        description="Clearing prices, sensitivities, and policy metrics for "
        "fire-sale contagion under risk-weighted capital requirements.",
    )

    @app.exception_handler(InputError)
    async def _input_error(_, exc: InputError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": 2}},
        )

    @app.exception_handler(SolverError)
    async def _solver_error(_, exc: SolverError) -> JSONResponse:
        return JSONResponse(
            status_code=409,
            content={"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": 3}},
        )

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok"}

    @app.post("/clear", response_model=ClearResponse)
    async def clear(request: ClearRequest) -> ClearResponse:
        system, _, result = _clear(request.scenario, request)
        return _clear_response(system, result)

    @app.post("/sensitivity", response_model=SensitivityResponse)
    async def sensitivity(request: SensitivityRequest) -> SensitivityResponse:
        system, strategy, result = _clear(request.scenario, request)
        if strategy == PRICE_MAKING:
            raise ConfigurationError(
                "price sensitivities need a fixed-price liquidation strategy; "
                "the price-making equilibrium has no linear response here"
            )
        tag = _param_tag(system, request.param)
        response = LinearResponse(system, strategy, result)
        solved = response.solve(tag)
        return SensitivityResponse(
            param=tag.describe(),
            dq=list(solved.dq),
            dq_bar=list(solved.dq_bar),
            condition_number=response.condition_number,
            boundary_warnings=list(solved.boundary_warnings),
        )

    @app.post("/policy", response_model=PolicyResponse)
    async def policy(request: PolicyRequest) -> PolicyResponse:
        system, strategy, result = _clear(request.scenario, request)
        if strategy == PRICE_MAKING:
            raise ConfigurationError(
                "policy metrics need a fixed-price liquidation strategy; "
                "run them under proportional, single-asset, utility-max, or price-taking"
            )
        return PolicyResponse(reports=_policy_reports(request, system, strategy, result))

    @app.post("/calibrate", response_model=CalibrateResponse)
    async def calibrate(request: CalibrateRequest) -> CalibrateResponse:
        if request.records is None:
            records = load_ccar_records()
        else:
            records = tuple(
                AggregateBankRecord(
                    name=r.name,
                    capital=r.capital,
                    liquid=r.liquid,
                    marketable_value=r.marketable,
                    nonmarketable_value=r.nonmarketable,
                    marketable_rwa=r.marketable_rwa,
                    nonmarketable_rwa=r.nonmarketable_rwa,
                )
                for r in request.records
            )
        weights = load_riskweights()
        if not 0.0 <= request.shock <= 1.0:
            raise ConfigurationError(f"shock must be a writedown fraction in [0, 1], got {request.shock:g}")
        shock = Shock(1.0 - request.shock, alpha_overrides=dict(request.alpha_overrides))
        system = build_ccar_system(records, weights, theta_min=request.theta_min, shock=shock)
        banks = [
            CalibratedBankModel(
                name=bank.name,
                liquid=bank.x,
                nonmarketable=bank.ell,
                liabilities=bank.p_bar,
                alpha_nonmarketable=bank.alpha_ell,
                holdings=list(bank.s),
            )
            for bank in system.banks
        ]
        clearing = None
        if request.clear:
            from .liquidation import Proportional

            result = picard_clear(system, Proportional())
            clearing = _clear_response(system, result)
        scenario = None
        if request.emit:
            scenario = ScenarioConfig.model_validate(
                {
                    "regulation": {
                        "theta_min": request.theta_min,
                        "alpha": [float(a) for a in system.regulation.alpha],
                    },
                    "assets": [
                        {
                            "family": asset.family.value,
                            "params": {"a": float(asset.a), "b": float(asset.b)},
                            "shares_outstanding": float(asset.shares_outstanding),
                        }
                        for asset in system.market.assets
                    ],
                    "banks": [b.model_dump() for b in banks],
                    "strategy": "proportional",
                    "solver": {"tol": 1.0e-12, "max_iter": 100_000},
                }
            )
        return CalibrateResponse(
            theta_min=request.theta_min,
            risk_weights=list(system.regulation.alpha),
            shares_outstanding=list(system.market.shares_outstanding),
            liquidity_params=[asset.b for asset in system.market.assets],
            banks=banks,
            clearing=clearing,
            scenario=scenario,
        )

    @app.post("/case-study", response_model=CaseStudyResponse)
    async def case_study(request: CaseStudyRequest) -> CaseStudyResponse:
        report = run_case_study(request.name, strict=False)
        return CaseStudyResponse(
            name=report.name,
            passed=report.passed,
            checks=[
                CheckModel(
                    description=c.description, expected=c.expected, actual=c.actual, ok=c.ok
                )
                for c in report.checks
            ],
            tables=[
                TableModel(title=t.title, headers=list(t.headers), rows=[list(r) for r in t.rows])
                for t in report.tables
            ],
        )

    @app.post("/sweep", response_model=TableModel)
    async def sweep_endpoint(request: SweepRequest) -> TableModel:
        spec = SweepSpec(
            parameter=request.parameter,
            grid=tuple(request.grid),
            outputs=tuple(request.outputs),
        )
        table = sweep(request.scenario, spec)
        return TableModel(
            title=table.title, headers=list(table.headers), rows=[list(r) for r in table.rows]
        )

    return app


app = create_app()
