class ValidationError(ValueError):
    """Input data or configuration violates a precondition."""


class NumericalError(ArithmeticError):
    """A computation degenerated (singular system, undefined estimator)."""
