"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, contract and
validation failures exit 2, and I/O failures (plain ``OSError``) exit 3.
"""


class LexchainError(Exception):
    """Base class for all package-specific errors."""


class UsageError(LexchainError):
    """Bad command-line arguments or option combinations."""


class ValidationError(LexchainError):
    """A data contract was violated (schema, range, invariant)."""


class ShapeError(ValidationError):
    """Tensor dimension mismatch; message names the offending shapes."""


class ParseError(ValidationError):
    """Structured text could not be parsed; carries location info when known."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.field = field


class ExtractionError(ValidationError):
    """An extraction response contained no usable triplets."""


class ContractError(LexchainError):
    """An API contract was violated by the caller (e.g. non-scalar loss)."""


class EvaluationError(LexchainError):
    """A numeric evaluation produced a non-finite or unusable value."""


class CapacityError(LexchainError):
    """An input exceeds a configured capacity (e.g. decoder context length)."""


class ConfigurationError(LexchainError):
    """Runtime configuration is inconsistent (e.g. missing chain set for a charge)."""
