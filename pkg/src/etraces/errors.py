"""Exception types raised across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this variant (e.g. running mean on a linear model)."""


class NumericFailureError(ArithmeticError):
    """A non-finite quantity appeared during learning or a linear solve failed."""

    def __init__(self, message: str, step: int | None = None, episode: int | None = None):
        self.step = step
        self.episode = episode
        where = []
        if episode is not None:
            where.append(f"episode {episode}")
        if step is not None:
            where.append(f"step {step}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class EnumerationBudgetError(RuntimeError):
    """Trajectory enumeration would exceed the configured prefix budget."""

    def __init__(self, budget: int):
        self.budget = budget
        super().__init__(f"enumeration exceeded budget of {budget} weighted prefixes")


class ConfigError(ValueError):
    """Configuration failed validation; ``errors`` holds (path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = "\n".join(f"  {path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid configuration:\n{lines}")
