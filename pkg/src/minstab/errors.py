"""Exception and warning types shared across the toolkit."""

from __future__ import annotations


class MinstabError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(MinstabError, ValueError):
    """Invalid grid, constant, or run configuration."""

    def __init__(self, message: str, errors: list[str] | None = None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class DataError(MinstabError, ValueError):
    """Sampled data is unusable (e.g. non-finite values)."""

    def __init__(self, message: str, node_index: int | None = None):
        super().__init__(message)
        self.node_index = node_index


class DomainError(MinstabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StateError(MinstabError, RuntimeError):
    """A required derived field has not been computed yet."""


class ConsistencyError(MinstabError, RuntimeError):
    """An internal numerical invariant was violated."""


class DegenerateInputError(MinstabError, ValueError):
    """Input has zero norm where a ratio is requested."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class BlowUpError(MinstabError, RuntimeError):
    """The flow produced non-finite values or diverging residuals."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class NonMinimalWarning(UserWarning):
    """The base graph is not minimal to the requested tolerance."""
