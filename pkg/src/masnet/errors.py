"""Exception hierarchy shared across the package."""


class MasnetError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MasnetError, ValueError):
    pass


class InvalidState(MasnetError, RuntimeError):
    pass


class CorruptCheckpoint(MasnetError):
    pass


class TrainingDiverged(MasnetError, ArithmeticError):
    pass
