"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input (bad config, bad file, bad argument)."""


class DomainError(ValueError):
    """Argument outside the domain where a quantity is defined."""


class UndefinedScoreError(ArithmeticError):
    """Score requested at a state carrying zero interpolant mass."""


class CapacityError(RuntimeError):
    """Problem too large for the dense exact machinery."""


class NumericalError(ArithmeticError):
    """Non-finite value produced during an iterative computation."""
