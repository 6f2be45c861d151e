"""Command-line client for the clearing service.

The CLI never computes anything itself: each subcommand serializes its
inputs, posts them to the HTTP app (in-process by default, remote with
``--server``), and renders the JSON reply as a pretty table or CSV.

Exit codes: 0 on success, 2 for invalid input or configuration, 3 when a
solver fails to converge, 4 when a bundled case study diverges from its
recorded expectations.
"""

from __future__ import annotations

import argparse
import sys
from typing import Any, Dict, List, Optional, Sequence

from .errors import (
    CaseStudyMismatchError,
    ConfigurationError,
    FiresaleError,
    InputError,
    ScenarioError,
    SolverError,
)

__all__ = ["main", "build_parser"]

_METRICS = ("all", "cr", "crl", "cmi", "dcb", "dpb", "icb", "ipb")


# ---------------------------------------------------------------------------
# transport


class _Client:
    """Tiny POST-and-decode wrapper over the service."""

    def __init__(self, server: Optional[str] = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=300.0)
        else:
            import warnings

            with warnings.catch_warnings():
                # the bundled starlette test transport import warns about its
                # httpx pin; nothing a CLI user can act on
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        response = self._client.post(path, json=payload)
        if response.status_code == 200:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            raise SolverError(f"service returned HTTP {response.status_code} with no detail")
        envelope = body.get("error")
        if envelope:
            message = envelope.get("message", "unknown service error")
            code = envelope.get("exit_code", 2)
            raise SolverError(message) if code == 3 else InputError(message)
        # fastapi's own validation reply for malformed requests
        details = body.get("detail", body)
        if isinstance(details, list):
            parts = [
                ".".join(str(x) for x in item.get("loc", [])) + ": " + item.get("msg", "")
                for item in details
            ]
            raise InputError("; ".join(parts))
        raise InputError(str(details))


# ---------------------------------------------------------------------------
# rendering


def _render(table: Dict[str, Any], mode: str, out=None) -> None:
    out = out or sys.stdout
    headers: List[str] = list(table["headers"])
    rows: List[List[str]] = [list(map(str, row)) for row in table["rows"]]
    if mode == "csv":
        import csv

        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)
        out.write("\n")
        return
    title = table.get("title", "")
    widths = [len(h) for h in headers]
    for row in rows:
        for j, cell in enumerate(row):
            widths[j] = max(widths[j], len(cell))
    if title:
        out.write(f"# {title}\n")
    out.write("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip() + "\n")
    out.write("  ".join("-" * w for w in widths) + "\n")
    for row in rows:
        out.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    out.write("\n")


def _table(title: str, headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> Dict[str, Any]:
    return {"title": title, "headers": list(headers), "rows": [list(r) for r in rows]}


# ---------------------------------------------------------------------------
# argument plumbing


def _load_config(args: argparse.Namespace) -> Dict[str, Any]:
    if not args.config:
        raise ScenarioError(f"the {args.command} command needs --config <scenario.yaml>")
    from .scenario import load_scenario

    return load_scenario(args.config).model_dump()


def _solve_options(args: argparse.Namespace) -> Dict[str, Any]:
    options: Dict[str, Any] = {}
    if args.strategy:
        options["strategy"] = args.strategy
    if args.tol is not None:
        options["tol"] = args.tol
    if args.max_iter is not None:
        options["max_iter"] = args.max_iter
    return options


def _parse_param(text: str) -> Dict[str, Any]:
    """Decode ``theta``, ``alpha:K``, ``shortfall:BANK``, ``holding:BANK,K``,
    or ``purchase:K`` into the wire form of a parameter tag."""
    head, _, rest = text.strip().partition(":")
    kind = head.strip().lower()
    if kind == "theta":
        if rest:
            raise ConfigurationError("theta takes no argument")
        return {"kind": "theta"}
    if kind in ("alpha", "purchase"):
        try:
            return {"kind": kind, "asset": int(rest)}
        except ValueError:
            raise ConfigurationError(f"{kind} needs an asset index, e.g. {kind}:0") from None
    if kind == "shortfall":
        if not rest:
            raise ConfigurationError("shortfall needs a bank, e.g. shortfall:0 or shortfall:NAME")
        return {"kind": "shortfall", "bank": _bank_ref(rest)}
    if kind == "holding":
        bank, _, asset = rest.partition(",")
        if not bank or not asset:
            raise ConfigurationError("holding needs bank and asset, e.g. holding:0,2")
        try:
            return {"kind": "holding", "bank": _bank_ref(bank), "asset": int(asset)}
        except ValueError:
            raise ConfigurationError(f"bad holding asset index {asset!r}") from None
    raise ConfigurationError(
        f"unknown parameter {text!r}; use theta, alpha:K, shortfall:BANK, "
        "holding:BANK,K, or purchase:K"
    )


def _bank_ref(text: str):
    text = text.strip()
    return int(text) if text.lstrip("-").isdigit() else text


def _parse_grid(args: argparse.Namespace) -> List[float]:
    if args.values:
        try:
            return [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"bad --values list {args.values!r}") from None
    if args.grid:
        parts = args.grid.split(":")
        if len(parts) != 3:
            raise ConfigurationError("--grid expects start:stop:step")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigurationError(f"bad --grid {args.grid!r}") from None
        if step <= 0:
            raise ConfigurationError("--grid step must be positive")
        count = int(round((stop - start) / step))
        values = [round(start + j * step, 12) for j in range(count + 1)]
        return [v for v in values if v <= stop + 1e-12]
    raise ConfigurationError("sweep needs --grid start:stop:step or --values a,b,c")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_clear(args: argparse.Namespace, client: _Client) -> int:
    payload = {"scenario": _load_config(args), **_solve_options(args)}
    reply = client.post("/clear", payload)
    m = len(reply["prices"]["q"])
    gamma_total = [sum(row[k] for row in reply["gamma"]) for k in range(m)]
    _render(
        _table(
            "clearing prices",
            ("asset", "q", "q_bar", "Gamma"),
            [
                (k, f"{reply['prices']['q'][k]:.12g}", f"{reply['prices']['q_bar'][k]:.12g}", f"{gamma_total[k]:.12g}")
                for k in range(m)
            ],
        ),
        args.output,
    )
    _render(
        _table(
            "banks",
            ("bank", "class", "units sold"),
            [
                (name, cls, f"{sum(row):.12g}")
                for name, cls, row in zip(reply["banks"], reply["classes"], reply["gamma"])
            ],
        ),
        args.output,
    )
    _render(
        _table(
            "solver",
            ("iterations", "residual", "uniqueness", "market cap"),
            [
                (
                    reply["iterations"],
                    f"{reply['residual']:.3e}",
                    reply["certificate"],
                    f"{reply['market_cap']:.12g}",
                )
            ],
        ),
        args.output,
    )
    return 0


def _cmd_sensitivity(args: argparse.Namespace, client: _Client) -> int:
    payload = {
        "scenario": _load_config(args),
        "param": _parse_param(args.param),
        **_solve_options(args),
    }
    reply = client.post("/sensitivity", payload)
    rows = [
        (k, f"{dq:.12g}", f"{dqb:.12g}")
        for k, (dq, dqb) in enumerate(zip(reply["dq"], reply["dq_bar"]))
    ]
    _render(_table(f"price response to {reply['param']}", ("asset", "dq", "dq_bar"), rows), args.output)
    _render(
        _table("conditioning", ("condition number",), [(f"{reply['condition_number']:.6g}",)]),
        args.output,
    )
    for name in reply["boundary_warnings"]:
        print(f"warning: {name} sits on a solvency boundary; the derivative is one-sided", file=sys.stderr)
    return 0


def _cmd_policy(args: argparse.Namespace, client: _Client) -> int:
    payload = {
        "scenario": _load_config(args),
        "metric": args.metric,
        **_solve_options(args),
    }
    if args.bank is not None:
        payload["bank"] = _bank_ref(args.bank)
    if args.source is not None:
        payload["source"] = _bank_ref(args.source)
    if args.asset is not None:
        payload["asset"] = args.asset
    reply = client.post("/policy", payload)
    rows = []
    for report in reply["reports"]:
        value = report["value"]
        rows.append(
            (
                report["metric"],
                report["subject"],
                "" if value is None else f"{value:.6g}",
                report["note"] if not report["applicable"] else report["sign_interpretation"],
            )
        )
    _render(_table("policy metrics", ("metric", "subject", "value", "reading"), rows), args.output)
    return 0


def _cmd_calibrate(args: argparse.Namespace, client: _Client) -> int:
    if args.ccar and args.records:
        raise ConfigurationError("--ccar and --records are mutually exclusive")
    payload: Dict[str, Any] = {
        "theta_min": args.theta,
        "shock": args.shock,
        "clear": not args.no_clear,
        "emit": args.emit is not None,
    }
    if args.records:
        from .calibration import load_ccar_records

        payload["records"] = [
            {
                "name": r.name,
                "capital": r.capital,
                "liquid": r.liquid,
                "marketable": r.marketable_value,
                "nonmarketable": r.nonmarketable_value,
                "marketable_rwa": r.marketable_rwa,
                "nonmarketable_rwa": r.nonmarketable_rwa,
            }
            for r in load_ccar_records(args.records)
        ]
    reply = client.post("/calibrate", payload)
    _render(
        _table(
            "calibrated market",
            ("asset", "risk weight", "shares outstanding", "impact slope b"),
            [
                (k, f"{a:.6g}", f"{mk:.6g}", f"{bk:.8g}")
                for k, (a, mk, bk) in enumerate(
                    zip(reply["risk_weights"], reply["shares_outstanding"], reply["liquidity_params"])
                )
            ],
        ),
        args.output,
    )
    _render(
        _table(
            "calibrated banks",
            ("bank", "liquid", "nonmarketable", "liabilities", "alpha_nm", "marketable value"),
            [
                (
                    b["name"],
                    f"{b['liquid']:.6g}",
                    f"{b['nonmarketable']:.6g}",
                    f"{b['liabilities']:.6g}",
                    f"{b['alpha_nonmarketable']:.6g}",
                    f"{sum(b['holdings']):.6g}",
                )
                for b in reply["banks"]
            ],
        ),
        args.output,
    )
    if reply.get("clearing"):
        clearing = reply["clearing"]
        _render(
            _table(
                "clearing after calibration",
                ("bank", "class"),
                list(zip(clearing["banks"], clearing["classes"])),
            ),
            args.output,
        )
        q = clearing["prices"]["q"]
        _render(
            _table(
                "price summary",
                ("min q", "market cap"),
                [(f"{min(q):.8g}", f"{clearing['market_cap']:.10g}")],
            ),
            args.output,
        )
    if args.emit is not None:
        import yaml

        text = yaml.safe_dump(reply["scenario"], sort_keys=False, width=100)
        if args.emit == "-":
            sys.stdout.write(text)
        else:
            with open(args.emit, "w") as fh:
                fh.write(text)
            print(f"wrote scenario to {args.emit}")
    return 0


def _cmd_case_study(args: argparse.Namespace, client: _Client) -> int:
    reply = client.post("/case-study", {"name": args.name})
    for table in reply["tables"]:
        _render(table, args.output)
    checks = reply["checks"]
    _render(
        _table(
            f"{reply['name']}: checks",
            ("status", "check", "expected", "actual"),
            [
                ("ok" if c["ok"] else "MISMATCH", c["description"], c["expected"], c["actual"])
                for c in checks
            ],
        ),
        args.output,
    )
    if not reply["passed"]:
        failures = [c for c in checks if not c["ok"]]
        _render(
            _table(
                f"{reply['name']}: diff",
                ("check", "expected", "actual"),
                [(c["description"], c["expected"], c["actual"]) for c in failures],
            ),
            args.output,
            out=sys.stderr,
        )
        raise CaseStudyMismatchError(
            f"case study {reply['name']!r} diverged on {len(failures)} of {len(checks)} checks",
            diffs=[f"{c['description']}: expected {c['expected']}, got {c['actual']}" for c in failures],
        )
    print(f"case study {reply['name']!r}: all {len(checks)} checks passed")
    return 0


def _cmd_sweep(args: argparse.Namespace, client: _Client) -> int:
    payload: Dict[str, Any] = {"parameter": args.param, "grid": _parse_grid(args)}
    if args.config:
        payload["scenario"] = _load_config(args)
    if args.only:
        payload["outputs"] = [o.strip() for o in args.only.split(",") if o.strip()]
    reply = client.post("/sweep", payload)
    _render(reply, args.output)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a scenario YAML file")
    common.add_argument("--strategy", help="override the scenario's liquidation strategy")
    common.add_argument("--tol", type=float, help="override the solver tolerance")
    common.add_argument("--max-iter", type=int, help="override the solver iteration cap")
    common.add_argument(
        "--output", choices=("csv", "table"), default="table", help="render results as CSV or aligned tables"
    )
    common.add_argument(
        "--seed",
        type=int,
        help="seed for randomized scenario generation; every bundled command is deterministic",
    )
    common.add_argument("--server", help="base URL of a running service (default: in-process)")

    parser = argparse.ArgumentParser(
        prog="firesale",
        description="Clearing prices, sensitivities, and policy metrics for "
        "fire-sale contagion under risk-weighted capital requirements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("clear", parents=[common], help="solve a scenario for its clearing prices")

    p_sens = sub.add_parser("sensitivity", parents=[common], help="differentiate clearing prices")
    p_sens.add_argument(
        "--param",
        required=True,
        help="theta | alpha:K | shortfall:BANK | holding:BANK,K | purchase:K",
    )

    p_policy = sub.add_parser("policy", parents=[common], help="regulation costs and bailout values")
    p_policy.add_argument("--metric", choices=_METRICS, default="all")
    p_policy.add_argument("--bank", help="focus bank (name or index)")
    p_policy.add_argument("--source", help="paying bank for dpb/ipb (name or index)")
    p_policy.add_argument("--asset", type=int, help="focus asset index")

    p_cal = sub.add_parser("calibrate", parents=[common], help="build the aggregate six-bank system")
    p_cal.add_argument("--theta", type=float, default=0.08, help="capital adequacy threshold")
    p_cal.add_argument(
        "--shock",
        type=float,
        default=0.0,
        help="fractional writedown of non-marketable books in [0, 1]; 0.05 is the published stress",
    )
    p_cal.add_argument("--ccar", action="store_true", help="calibrate the bundled stress-test records (the default)")
    p_cal.add_argument("--records", help="CSV of aggregate bank records to calibrate instead of the bundled ones")
    p_cal.add_argument("--no-clear", action="store_true", help="skip clearing the calibrated system")
    p_cal.add_argument("--emit", metavar="PATH", help="write the calibrated system as a scenario file ('-' for stdout)")

    p_case = sub.add_parser("case-study", parents=[common], help="re-run a bundled study and diff it")
    p_case.add_argument("name", help="two-bank-low | two-bank-high | diversification | ccar")

    p_sweep = sub.add_parser("sweep", parents=[common], help="clear a scenario across a parameter grid")
    p_sweep.add_argument("--param", required=True, help="dotted config path, diversification.lambda, or shock.factor")
    p_sweep.add_argument("--grid", help="start:stop:step")
    p_sweep.add_argument("--values", help="comma-separated grid values")
    p_sweep.add_argument("--only", help="comma-separated outputs: prices,gamma,market_cap,classes")

    return parser


_DISPATCH = {
    "clear": _cmd_clear,
    "sensitivity": _cmd_sensitivity,
    "policy": _cmd_policy,
    "calibrate": _cmd_calibrate,
    "case-study": _cmd_case_study,
    "sweep": _cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        client = _Client(args.server)
        return _DISPATCH[args.command](args, client)
    except CaseStudyMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for diff in exc.diffs:
            print(f"  {diff}", file=sys.stderr)
        return 4
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FiresaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
