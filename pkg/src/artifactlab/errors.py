"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the classes coarse.
"""


class ArtifactLabError(Exception):
    """Base class for every error raised deliberately by this package."""


class ParseError(ArtifactLabError, ValueError):
    """A document could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ArtifactLabError, ValueError):
    """Well-formed input that violates a data-model invariant."""


class DomainError(ArtifactLabError, ValueError):
    """An argument outside the domain of an operation."""


class EmptyAnswerError(DomainError):
    """A classifier answer contained no recognisable label."""

    def __init__(self, message, unmatched=()):
        self.unmatched = list(unmatched)
        super().__init__(message)


class AnswerConflictError(DomainError):
    """An answer mixed "No artifacts" with artifact categories."""

    def __init__(self, message, labels=None, unmatched=()):
        self.labels = labels
        self.unmatched = list(unmatched)
        super().__init__(message)


class VersionMismatchError(ArtifactLabError):
    """A file was written by an incompatible format version."""


class NumericalError(ArtifactLabError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class TransportError(ArtifactLabError, ConnectionError):
    """The remote classifier could not be reached."""


class ProtocolError(ArtifactLabError):
    """The remote classifier replied with a non-conforming payload."""
