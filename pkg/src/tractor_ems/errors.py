"""Exception hierarchy shared by all modules."""


class EmsError(Exception):
    """Base class for package errors."""

    exit_code = 1


class DomainError(EmsError, ValueError):
    """Argument outside the mathematical domain of a function."""


class InfeasibleStateError(EmsError):
    """No admissible battery power exists for a state (empty bounds or mask)."""

    exit_code = 3


class FeasibilityError(InfeasibleStateError):
    """A requested battery power lies outside the admissible interval."""


class ParseError(EmsError, ValueError):
    """Malformed input file. ``row`` is 1-based when known."""

    exit_code = 2

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ConfigError(EmsError, ValueError):
    exit_code = 2


class NotReadyError(EmsError):
    """Replay buffer holds fewer transitions than the requested batch."""
