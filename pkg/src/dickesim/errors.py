"""Exception hierarchy shared by all solvers and the command line."""


class DickeSimError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DickeSimError, ValueError):
    """An input lies outside the domain of a formula."""


class ConfigurationError(DickeSimError, ValueError):
    """A run specification or config file is invalid or inconsistent."""


class NumericalError(DickeSimError, RuntimeError):
    """A solver produced a non-finite state or failed to advance.

    Attributes carry enough context to reproduce the failure.
    """

    def __init__(self, message, *, time=None, trajectory=None, state=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory
        self.state = state
