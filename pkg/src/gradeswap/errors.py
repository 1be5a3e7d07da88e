"""Exception hierarchy shared by every module."""


class GradeSwapError(Exception):
    """Base class for all package errors."""


class InvalidInput(GradeSwapError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(GradeSwapError):
    """An input file could not be parsed."""


class Refusal(GradeSwapError):
    """A well-formed request was refused by a business rule.

    ``reason`` is a short machine-readable code such as ``"fee-cap"``.
    """

    def __init__(self, reason, message=None):
        self.reason = reason
        super().__init__(f"{reason}: {message}" if message else reason)
