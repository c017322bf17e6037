from __future__ import annotations


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario/configuration input."""


class NumericalFailure(RuntimeError):
    """A filter or integrator produced a non-finite or indefinite state."""

    def __init__(self, message: str, *, step: int | None = None, time: float | None = None,
                 realization: int | None = None):
        self.step = step
        self.time = time
        self.realization = realization
        where = []
        if realization is not None:
            where.append(f"realization {realization}")
        if step is not None:
            where.append(f"step {step}")
        if time is not None:
            where.append(f"t={time:.6g}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
