"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape, range, budget)."""


class NumericalError(ArithmeticError):
    """A linear-algebra or optimisation step failed beyond recovery."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EvaluationError(RuntimeError):
    """The black-box objective could not produce a usable value."""

    def __init__(self, message, raw_reply=None):
        super().__init__(message)
        self.raw_reply = raw_reply


class DatasetParseError(ValueError):
    """A pre-generated dataset file does not match the documented schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, message, key=None, line=None):
        parts = []
        if key is not None:
            parts.append(f"key '{key}'")
        if line is not None:
            parts.append(f"line {line}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.key = key
        self.line = line
