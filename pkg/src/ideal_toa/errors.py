"""Exception hierarchy.

Every error carries a ``category`` string used by the CLI to pick an exit
code and a diagnostic prefix.
"""


class ToaError(Exception):
    category = "error"


class ConfigError(ToaError, ValueError):
    category = "config"

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.message = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class InvalidFieldError(ToaError, ValueError):
    category = "field"


class DomainError(ToaError, ValueError):
    category = "domain"


class NumericalError(ToaError, RuntimeError):
    category = "numerical"


class NumericalBreakdownError(NumericalError):
    category = "breakdown"


class ResolutionError(NumericalError):
    category = "resolution"


class BudgetError(NumericalError):
    category = "budget"


class CFLError(NumericalError):
    category = "cfl"

    def __init__(self, message, suggested_dt=None):
        self.suggested_dt = suggested_dt
        super().__init__(message)


class EngineInvalidError(NumericalError):
    category = "engine-invalid"


class FarWallError(NumericalError):
    category = "far-wall"


class SemanticsError(ToaError, ValueError):
    """Raised when an arrival quantity is requested from a non-absorbing run."""

    category = "semantics"


class UndefinedConditionalError(ToaError, ZeroDivisionError):
    category = "conditional"


class NoBackflowFoundError(ToaError, RuntimeError):
    category = "no-backflow"

    def __init__(self, message, box=None):
        self.box = box
        super().__init__(message)
