"""Exception hierarchy shared by all modules."""


class TmepError(Exception):
    """Base class for library errors."""


class HermiticityError(TmepError, ValueError):
    pass


class DomainError(TmepError, ValueError):
    """A matrix function or construction was asked outside its domain."""


class FaithfulnessError(DomainError):
    """A state that must be faithful (strictly positive) is not."""


class ShapeError(TmepError, ValueError):
    pass


class ResourceError(TmepError, MemoryError):
    """A configured size budget (modes, sites, nesting depth) was exceeded."""


class AccuracyError(TmepError, ArithmeticError):
    """A quadrature could not reach its tolerance at maximal refinement."""


class PreconditionError(TmepError, ValueError):
    pass


class ValidationError(TmepError, ValueError):
    """Model data violates a structural requirement (decoupling, support)."""


class ConfigError(TmepError, ValueError):
    """Run configuration is malformed; carries the offending key path."""

    def __init__(self, message, key=None):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}" if key else message)
