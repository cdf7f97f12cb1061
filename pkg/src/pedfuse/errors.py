"""Exception hierarchy shared across the package."""


class PedfuseError(Exception):
    """Base class for all package errors."""


class DimensionError(PedfuseError, ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(PedfuseError, ValueError):
    """A precondition on argument values was violated."""


class NumericError(PedfuseError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(PedfuseError, ValueError):
    """A model, run or dataset configuration is invalid or inconsistent."""


class InputError(PedfuseError, ValueError):
    """Input data does not match what the model configuration requires."""


class ParseError(PedfuseError, ValueError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(PedfuseError, ValueError):
    """Parsed data violates a domain invariant."""


class CheckpointError(PedfuseError, ValueError):
    """A checkpoint file is corrupt or from an incompatible version."""
