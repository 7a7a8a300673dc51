class CoolOffError(Exception):
    """Base class for every error raised by the application."""

    exit_code = 1
    """Process exit code used by the CLI when this error escapes a command."""


class ParameterError(CoolOffError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class ConfigError(CoolOffError):
    """The run configuration cannot be parsed or fails semantic validation."""

    exit_code = 2

    def __init__(self, message, key=None, line=None, column=None):
        self.key = key
        self.line = line
        self.column = column

        location = []

        if line is not None:
            location.append(f"line {line}" + (f", column {column}" if column else ""))

        if key:
            location.append(f"key '{key}'")

        prefix = f"[{'; '.join(location)}] " if location else ""

        super().__init__(f"{prefix}{message}")


class InfeasibleError(CoolOffError):
    """A derivation found no parameters satisfying the required inequalities."""

    exit_code = 3

    def __init__(self, message, witness=None):
        self.witness = witness or {}
        super().__init__(message)


class ConvergenceError(CoolOffError):
    """Best-response iteration did not settle within its iteration budget."""

    exit_code = 4

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class BudgetError(CoolOffError):
    """An exact enumeration would exceed its configured size budget."""

    exit_code = 5

    def __init__(self, message, required=None, budget=None, suggestion=None):
        self.required = required
        self.budget = budget
        self.suggestion = suggestion
        super().__init__(message)


class ResolutionError(CoolOffError):
    """A grid is too coarse to certify the requested tolerance."""


class ConsistencyError(CoolOffError):
    """A history has probability zero under the policy it is evaluated for."""


class OffPathError(CoolOffError):
    """An observed action has probability zero in both states."""
