"""Exception hierarchy for phaseflow."""

from __future__ import annotations

from collections.abc import Sequence
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .solvers import RunTrace


class PhaseFlowError(Exception):
    """Base class for every error raised by phaseflow."""


class InvalidParameterError(PhaseFlowError, ValueError):
    """Raised when an input violates a documented precondition."""


class DimensionMismatchError(InvalidParameterError):
    """Raised when a vector length does not match an operator dimension."""


class EnsembleFormatError(PhaseFlowError, ValueError):
    """Raised when an ensemble JSON document cannot be decoded."""


class ConvergenceError(PhaseFlowError):
    """Raised when power iteration exhausts its iteration budget.

    The last estimate is kept on the exception so callers that only need a rough
    value can still use it.
    """

    def __init__(self, message: str, *, last_value: float, iterations: int) -> None:
        super().__init__(message)
        self.last_value = last_value
        self.iterations = iterations


class NumericalAbortError(PhaseFlowError):
    """Raised when a solver produces a non-finite iterate.

    Distinct from invalid input: the run started fine and diverged, typically because
    the step size lies outside the hypotheses of the convergence theorems. The partial
    trace recorded up to the abort is attached.
    """

    def __init__(self, message: str, *, trace: RunTrace) -> None:
        super().__init__(message)
        self.trace = trace


class ConfigError(PhaseFlowError):
    """Raised when a CLI configuration fails schema validation."""

    def __init__(self, message: str, *, path: Sequence[str | int] = ()) -> None:
        super().__init__(message)
        self.path = tuple(path)

    @property
    def path_text(self) -> str:
        """Return the schema path as a dotted string."""

        return ".".join(str(part) for part in self.path) or "<root>"
