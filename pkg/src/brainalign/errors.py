"""Exception hierarchy.

Everything the CLI should report as a validation failure (exit code 2)
derives from :class:`ValidationError`; numerical breakdowns (exit code 3)
derive from :class:`NumericalError`.
"""


class BrainAlignError(Exception):
    """Base class for all package errors."""


class ValidationError(BrainAlignError, ValueError):
    """Input does not satisfy a documented precondition."""


class ArgumentError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class LengthError(ValidationError):
    pass


class RankError(ValidationError):
    pass


class ConnectivityError(ValidationError):
    pass


class DegenerateColumnError(ValidationError):
    """Reference vertices received no transported mass."""

    def __init__(self, dead):
        self.dead = list(dead)
        shown = self.dead[:20]
        more = "" if len(self.dead) <= 20 else f" (+{len(self.dead) - 20} more)"
        super().__init__(f"reference vertices with zero mass: {shown}{more}")


class NumericalError(BrainAlignError, ArithmeticError):
    """A solver produced non-finite values."""


class SingularityError(NumericalError):
    pass


class StageError(BrainAlignError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
