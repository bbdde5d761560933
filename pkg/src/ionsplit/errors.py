"""
Structured error types for ionsplit.

Every error carries a machine-readable code, a details payload and the process
exit code the CLI maps it to.
"""

from datetime import datetime, timezone
from typing import Any, Dict, Iterable, Optional

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class IonsplitError(Exception):
    """
    Base toolkit error with structured format.

    Attributes:
        message: Human readable error message
        error_code: Machine-readable error code
        details: Additional error context
        exit_code: CLI exit code for this error family
    """

    exit_code = EXIT_NUMERIC
    default_code = "IONSPLIT_ERROR"

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.default_code
        self.details = details or {}


class UsageError(IonsplitError):
    exit_code = EXIT_USAGE
    default_code = "USAGE_ERROR"


class ConfigError(UsageError):
    default_code = "CONFIG_ERROR"


class DataIOError(IonsplitError):
    exit_code = EXIT_IO
    default_code = "IO_ERROR"


class ParseError(DataIOError):
    default_code = "PARSE_ERROR"


class NumericError(IonsplitError):
    exit_code = EXIT_NUMERIC
    default_code = "NUMERIC_ERROR"


class RangeError(NumericError):
    default_code = "RANGE_ERROR"


class NonConfiningError(NumericError):
    default_code = "NON_CONFINING"


class NoEquilibriumError(NumericError):
    default_code = "NO_EQUILIBRIUM"


class ConvergenceError(NumericError):
    default_code = "CONVERGENCE_ERROR"


class UnstableConfigurationError(NumericError):
    default_code = "UNSTABLE_CONFIGURATION"


class DegenerateScanError(NumericError):
    default_code = "DEGENERATE_SCAN"


class UnderdeterminedFitError(NumericError):
    default_code = "UNDERDETERMINED_FIT"


class DomainError(NumericError):
    default_code = "DOMAIN_ERROR"


class SaturationError(NumericError):
    default_code = "SATURATION"


class RateError(NumericError):
    default_code = "RATE_ERROR"


class EscapeError(NumericError):
    default_code = "ION_ESCAPED"


class TimestepError(NumericError):
    default_code = "TIMESTEP_ERROR"


class ClassificationError(NumericError):
    default_code = "CLASSIFICATION_ERROR"


class TruncationError(NumericError):
    default_code = "TRUNCATION_ERROR"


class IdentifiabilityError(NumericError):
    default_code = "NOT_IDENTIFIABLE"


class DivergenceError(NumericError):
    default_code = "SERVO_DIVERGENCE"


class WindowNotFoundError(NumericError):
    default_code = "WINDOW_NOT_FOUND"


def format_error(error: Exception) -> Dict[str, Any]:
    """
    Format an error as a structured payload.

    Args:
        error: Exception to format

    Returns:
        Dict with error, error_code, timestamp, details and exit_code
    """
    if isinstance(error, IonsplitError):
        message = error.message
        error_code = error.error_code
        details = error.details
        exit_code = error.exit_code
    else:
        message = str(error)
        error_code = "INTERNAL_ERROR"
        details = {}
        exit_code = EXIT_NUMERIC

    return {
        "error": message,
        "error_code": error_code,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "details": details,
        "exit_code": exit_code,
    }


# Common error factories
def range_error(
    quantity: str, value: Any, lower: Optional[float] = None, upper: Optional[float] = None
) -> RangeError:
    """Create a range error for a value outside [lower, upper]"""
    details: Dict[str, Any] = {"quantity": quantity, "value": value}
    if lower is not None:
        details["lower"] = lower
    if upper is not None:
        details["upper"] = upper
    return RangeError(
        message=f"{quantity}={value!r} outside valid range [{lower}, {upper}]",
        details=details,
    )


def saturation_error(channel: str, indices: Iterable[int], limit: float) -> SaturationError:
    """Create a saturation error listing offending sample indices"""
    offending = [int(i) for i in indices]
    return SaturationError(
        message=(
            f"{len(offending)} sample(s) on channel {channel} exceed the +/-{limit} V range "
            f"(first index {offending[0] if offending else None})"
        ),
        details={"channel": channel, "indices": offending[:50], "count": len(offending)},
    )


def parse_error(path: Any, line: int, reason: str) -> ParseError:
    """Create a parse error pointing at a file line"""
    return ParseError(
        message=f"{path}:{line}: {reason}",
        details={"path": str(path), "line": line, "reason": reason},
    )


def non_confining_error(quantity: str, value: float) -> NonConfiningError:
    """Create an error for a potential that does not confine"""
    return NonConfiningError(
        message=f"{quantity}={value:.6g} does not confine the ions",
        details={"quantity": quantity, "value": value},
    )
