"""Exception types shared across the scheduler and simulator."""


class MageError(Exception):
    pass


class InvalidArgument(MageError, ValueError):
    pass


class ConflictError(MageError):
    pass


class NumericError(MageError, ArithmeticError):
    """Raised when an iterative numeric routine fails.

    ``iteration`` carries the epoch or sweep at which the failure was detected.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InfeasibleError(MageError):
    pass


class BusyError(MageError):
    """Retriable: a profiling slot or core is temporarily unavailable."""


class InvalidState(MageError, RuntimeError):
    pass


class ConfigError(MageError, ValueError):
    pass
