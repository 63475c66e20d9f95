"""Exception taxonomy shared across the package."""


class HittaError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(HittaError, ValueError):
    """Tensor/array shape or channel-count mismatch."""


class ConfigError(HittaError, ValueError):
    """Invalid or out-of-range configuration value."""


class ValidationError(HittaError, ValueError):
    """Input violates a documented precondition (non-simplex probs, bad mask, ...)."""


class NumericError(HittaError, ArithmeticError):
    """Non-finite values encountered where finite math is required."""


class StatisticsError(HittaError, ValueError):
    """Batch too small to estimate normalization statistics."""


class DegenerateMaskError(ValidationError):
    """A mask transform annihilated a structure that must stay nonempty."""
