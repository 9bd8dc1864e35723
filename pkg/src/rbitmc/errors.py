"""Shared exception types."""


class CapacityError(RuntimeError):
    """Requested computation exceeds the exact-enumeration capacity."""


class NumericFailure(RuntimeError):
    """A path iteration produced a non-finite state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigurationError(Exception):
    """Invalid or incomplete experiment configuration."""


class InternalInvariantError(RuntimeError):
    """An internal consistency condition failed; results must not be trusted."""
