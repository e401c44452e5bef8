from typing import Optional


class GwmError(ValueError):
    """Base class for every error raised by gwm_pictures."""


class ShapeMismatchError(GwmError):
    pass


class ModeOutOfRangeError(GwmError):
    pass


class UnknownSymbolError(GwmError):
    pass


class AlphabetError(GwmError):
    pass


class SingularMatrixError(GwmError):
    pass


class SizeGuardError(GwmError):
    pass


class InfeasibleRequestError(GwmError):
    pass


class LabelDomainError(GwmError):
    pass


class MalformedInputError(GwmError):
    """
    Raised when a model, automaton, dataset or picture file cannot be read.

    The position is a ``line:column`` pair for syntax problems or a dotted
    field path for schema problems.
    """

    def __init__(self, message: str, position: Optional[str] = None) -> None:
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


class NonFiniteLossError(GwmError):
    def __init__(self, message: str, report=None) -> None:
        super().__init__(message)
        self.report = report
