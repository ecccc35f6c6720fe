"""Exception hierarchy.

Every error carries a short ``code`` string so that callers (and the CLI)
can react to a failure class without parsing messages.
"""


class TdpafError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        return f"[{self.code}] {super().__str__()}"


class ValidationError(TdpafError, ValueError):
    """Input data violate a record or file invariant."""

    code = "validation"
    exit_code = 1


class MissingTerminalEventsError(ValidationError):
    code = "factual-cif-needs-terminal-events"


class MissingDataError(ValidationError):
    """A method was asked to run without the data it requires."""

    code = "missing-data"


class NumericalError(TdpafError, ArithmeticError):
    code = "numerical"
    exit_code = 2


class DegenerateWeightError(NumericalError):
    code = "degenerate-weight"


class EmptyRiskSetError(NumericalError):
    code = "empty-risk-set"


class DegenerateCellError(NumericalError):
    code = "degenerate-cell"


class NoEventsError(NumericalError):
    code = "no-events"


class SeparationError(NumericalError):
    code = "separation-detected"


class SingularInformationError(NumericalError):
    code = "singular-information"


class ConvergenceError(NumericalError):
    code = "no-convergence"


class BootstrapFailureError(NumericalError):
    code = "bootstrap-failed"


class GridMismatchError(ValidationError):
    code = "grid-mismatch"
