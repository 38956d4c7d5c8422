"""Typed errors raised across the package.

Every error a caller might want to catch programmatically has its own
class; the CLI maps them to one-line diagnostics and a nonzero exit.
"""


class DdsmcError(Exception):
    """Base class for all package errors."""


class ArgumentError(DdsmcError, ValueError):
    """A function received a value outside its documented domain."""


class StateError(DdsmcError):
    """An operation was applied to an object in the wrong state
    (e.g. unincorporating from an empty sufficient-statistic set)."""


class NumericalError(DdsmcError):
    """A numerical operation failed (non-SPD matrix, non-finite result).

    Carries enough context to reproduce: callers attach the offending
    state via the ``detail`` attribute.
    """

    def __init__(self, message: str, detail=None):
        super().__init__(message)
        self.detail = detail


class DegenerateWeightsError(DdsmcError):
    """All particle weights vanished at one step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"all particle weights are zero at step {step}")


class ProposalSupportError(DdsmcError):
    """A proposal selected a choice the prior gives probability 0."""


class FormatError(DdsmcError):
    """A file failed to parse. Carries path and 1-based line number."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


class TrainingDivergedError(DdsmcError):
    """Training loss exploded; suggests lowering the learning rate."""


class UsageError(DdsmcError):
    """Bad command-line invocation or configuration."""
