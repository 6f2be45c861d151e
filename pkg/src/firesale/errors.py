"""Exception hierarchy shared across the package.

Grouping the exceptions here lets the CLI map them onto exit codes in one
place: configuration and input problems exit with 2, solver failures with 3.
"""


class FiresaleError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FiresaleError):
    """Invalid input data or configuration (CLI exit code 2)."""


class DomainError(InputError):
    """A quantity was evaluated outside its admissible domain."""


class NonDifferentiableFamilyError(InputError):
    """Derivative requested for a price-impact family without one."""


class ConfigurationError(InputError):
    """A model-level requirement on the parameters is violated."""


class UnregulatedBankError(InputError):
    """Capital ratio requested for a bank with no risk-weighted assets."""


class CalibrationError(InputError):
    """System construction from aggregate data failed."""


class ScenarioError(InputError):
    """A scenario file failed to parse or validate."""


class SolverError(FiresaleError):
    """Base class for numerical failures (CLI exit code 3)."""


class NonConvergenceError(SolverError):
    """An iterative solver hit its iteration budget.

    Carries the last residual so callers can report how far off it was.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class StrategyContractError(SolverError):
    """A monotone iteration produced a non-monotone step."""


class KinkError(SolverError):
    """A finite-difference stencil straddled a solvency-class boundary."""


class SensitivityError(SolverError):
    """The sensitivity linear system could not be solved reliably."""


class CaseStudyMismatchError(FiresaleError):
    """Case-study output diverged from its recorded expectations (exit 4).

    Carries the offending comparisons as (label, expected, actual) rows so
    the CLI can print a diff table.
    """

    def __init__(self, message: str, diffs=None):
        super().__init__(message)
        self.diffs = list(diffs or [])
