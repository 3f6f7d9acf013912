"""Exception types shared across the package."""


class AsyncAdmmError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(AsyncAdmmError, ValueError):
    """Invalid problem, schedule, or run configuration."""


class ScheduleViolationError(AsyncAdmmError, RuntimeError):
    """A round input requested a gradient older than the staleness budget."""


class SurrogateSolveError(AsyncAdmmError, RuntimeError):
    """The surrogate subproblem was singular or not positive definite."""
