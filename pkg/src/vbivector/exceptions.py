"""Exception hierarchy shared by the trainers, storage layer and CLI."""


class VBIVectorError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VBIVectorError, ValueError):
    """Argument outside the domain of a special function."""


class RejectedInputError(VBIVectorError, ValueError):
    """Input arrays with wrong shape, non-finite values or invalid ranges."""


class DegeneracyError(VBIVectorError, ArithmeticError):
    """A precision matrix could not be factorized."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class NumericalError(VBIVectorError, ArithmeticError):
    """Non-finite value produced during training."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceError(VBIVectorError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContainerError(VBIVectorError):
    """Problem reading or validating a tensor container."""


class CorruptContainerError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


class HashMismatchError(ContainerError):
    """Statistics and model were built against different backends."""
