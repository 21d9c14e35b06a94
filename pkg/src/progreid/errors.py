"""Exception types shared across the pipeline.

Every error carries a short machine-readable ``code`` (the class name) so the
command-line front end can print one parseable line per failure.
"""

from __future__ import annotations


class ReidError(Exception):
    """Base class for all library errors."""

    #: exit status used by the command-line front end
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class UsageError(ReidError):
    """Bad input shape, bad configuration or an unsatisfiable request."""

    exit_code = 2


# events
class MalformedLine(ReidError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class TypeMismatch(ReidError):
    pass


class BadTimestamp(ReidError):
    pass


# graph / channels
class TargetAbsent(ReidError):
    pass


class EmptyWindow(ReidError):
    pass


class BadNodeId(ReidError):
    pass


class NoChannels(UsageError):
    pass


class NotSymmetric(ReidError):
    pass


class ZeroDiagonal(ReidError):
    pass


# numerics
class ShapeMismatch(ReidError):
    pass


class NonFinite(ReidError):
    pass


class NotScalarLoss(ReidError):
    pass


# model
class LabelOutOfRange(ReidError):
    pass


class EmptyDataset(UsageError):
    pass


class SchemaVersionMismatch(ReidError):
    pass


class SingleClassWarning(UserWarning):
    """Training set holds only one label."""


# evaluation
class LengthMismatch(ReidError):
    pass


class OneClassOnly(ReidError):
    pass


class TooFewExamples(UsageError):
    pass


# synthetic data
class BadProfile(UsageError):
    pass


class UnknownVictim(UsageError):
    pass


class ConfigError(UsageError):
    pass
