"""Exception hierarchy shared by all modules."""


class ShapeGradError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ShapeGradError):
    """Invalid or incomplete configuration (unbound parameter, bad config file)."""


class ValidationError(ShapeGradError):
    """Geometric or numeric input that violates a documented invariant."""


class ContractError(ShapeGradError):
    """An API precondition was violated (shape mismatch, call order)."""


class NumericError(ShapeGradError):
    """Non-finite values or a solver failure."""
