class ArgumentError(ValueError):
    """Invalid argument: wrong dimensions, unknown names, out-of-range values."""


class DomainError(ArithmeticError):
    """Division or logarithm evaluated outside its guarded domain."""


class PropagationError(ArithmeticError):
    """A propagated quantity became non-finite."""

    def __init__(self, message, coordinate=None, step=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.step = step
