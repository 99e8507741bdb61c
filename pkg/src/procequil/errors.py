"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input failed a structural or numerical precondition."""


class LegMismatchError(ValidationError):
    """Two multi-leg operators cannot be contracted or compared."""


class BudgetExceeded(RuntimeError):
    """A computation would exceed the desk-scale size caps."""
