"""Exception hierarchy shared by every module."""


class CarnotError(Exception):
    """Base class for errors raised by carnotlab."""


class SpecError(CarnotError, ValueError):
    """Malformed or invalid group specification."""


class DomainError(CarnotError, ValueError):
    """Argument outside the domain of an operation."""


class NumericalError(CarnotError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""
