from __future__ import annotations

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


class LabError(RuntimeError):
    def __init__(self, message: str, context: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.context: dict[str, Any] = dict(context or {})


class DomainError(LabError, ValueError):
    """Invalid argument or violated precondition."""


class NumericalFailure(LabError):
    pass


class QuadratureError(NumericalFailure):
    pass


class FactorizationError(NumericalFailure):
    def __init__(self, message: str, size: int, jitter_tried: float, condition_estimate: float) -> None:
        super().__init__(
            message,
            {"size": size, "jitter_tried": jitter_tried, "condition_estimate": condition_estimate},
        )
        self.size = size
        self.jitter_tried = jitter_tried
        self.condition_estimate = condition_estimate


class InconclusiveExperiment(LabError):
    """Experiment finished but its numbers are dominated by noise or cut short by budget."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InconclusiveExperiment):
        return EXIT_INCONCLUSIVE
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERICAL
    if isinstance(exc, (DomainError, ValueError)):
        return EXIT_USAGE
    return 1
