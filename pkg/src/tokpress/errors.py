"""Exception hierarchy shared across the package.

Two broad families matter to the CLI: configuration problems
(:class:`ConfigError`, exit code 2) and data problems
(:class:`DataError`, exit code 3). Everything else is a bug.
"""

from __future__ import annotations


class TokpressError(Exception):
    """Base class for all package-specific errors."""


# --------------------------------------------------------------------------
# data errors (bad inputs, bad files) -> CLI exit code 3


class DataError(TokpressError):
    """Invalid data: malformed files, inconsistent shapes, bad tensors."""


class BadMagic(DataError):
    """Dump file does not start with the expected magic bytes."""


class VersionMismatch(DataError):
    """Dump file declares an unsupported format version."""


class ChecksumMismatch(DataError):
    """Dump payload does not match its trailing CRC32."""


class TruncatedDump(DataError):
    """Dump file is shorter than its header promises."""


class NonFiniteValue(DataError):
    """A tensor contains NaN or infinity where finite values are required."""


class IndexOutOfRange(DataError):
    """A plan references a token index outside the token set."""


class OverlappingGroups(DataError):
    """A plan reuses a token index across kept/merge groups."""


class EmptyResult(DataError):
    """A plan would retain zero tokens."""


class MissingClsAttention(DataError):
    """Attention bundle lacks the classifier-to-patch vector."""


class MissingTextAttention(DataError):
    """Attention bundle lacks the text-to-visual matrix."""


class NoGrid(DataError):
    """Operation needs the full frame grid but the token set was reduced."""


class SingleFrame(DataError):
    """Operation needs at least two frames."""


class ShapeMismatch(DataError):
    """Matrix/vector dimensions do not line up."""


class RTooLarge(DataError):
    """Bipartite merge step asked to remove more than half the tokens."""


class BudgetExceedsTokens(DataError):
    """Requested budget cannot be satisfied by the token set."""


class NonPositiveScale(DataError):
    """Smoothing scales must be strictly positive."""


class SingularHessian(DataError):
    """Calibration Hessian stayed singular even after extra dampening."""


class EmptyInput(DataError):
    """An aggregation received no records."""


class DuplicateQuestions(DataError):
    """A dialogue pair uses the same question twice for one image."""


# --------------------------------------------------------------------------
# configuration errors -> CLI exit code 2


class ConfigError(TokpressError):
    """Invalid pipeline configuration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigSyntaxError(ConfigError):
    """Config text failed to parse."""


class UnknownOperator(ConfigError):
    """Config names an operator this engine does not provide."""


class InvalidParameter(ConfigError):
    """An operator parameter is missing, mistyped, or out of range."""


# --------------------------------------------------------------------------
# warnings


class BudgetClampedWarning(UserWarning):
    """Budget exceeded the token count and was clamped to it."""
