"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SgnLabError(Exception):
    exit_code = 1


class ConfigurationError(SgnLabError, ValueError):
    """Invalid problem, topology or run configuration."""

    exit_code = 1


class DataError(SgnLabError):
    """Malformed input data (CSV ingestion, missing columns, bad cells)."""

    exit_code = 2


class DivergenceError(SgnLabError, FloatingPointError):
    """A simulated model left the finite range.

    Carries the offending node (``None`` for a shared model) and the number of
    events or steps applied before the blow-up.
    """

    exit_code = 3

    def __init__(self, message, node=None, step=None, time=None):
        super().__init__(message)
        self.node = node
        self.step = step
        self.time = time


class BoundCheckError(SgnLabError):
    exit_code = 4
