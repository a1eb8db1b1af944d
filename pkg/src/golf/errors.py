"""Exception hierarchy shared by the library and the command line."""


class GolfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(GolfError, ValueError):
    """A parameter is outside its admissible domain."""


class PreconditionError(GolfError, ValueError):
    """Inputs violate a structural precondition (sorting, shapes, ...)."""


class NumericalError(GolfError, ArithmeticError):
    """A factorization or recursion broke down numerically."""


class ConfigError(GolfError):
    """Invalid or inconsistent run configuration."""


class DataError(GolfError):
    """Malformed input data."""
