"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """A parameter is outside its documented domain."""


class TruncationError(ValueError):
    """A requested ball or box does not fit inside the sampled lattice box."""


class EnvironmentFileError(ValueError):
    """Base class for environment file decoding failures."""


class VersionMismatchError(EnvironmentFileError):
    pass


class ChecksumError(EnvironmentFileError):
    pass


class TruncatedFileError(EnvironmentFileError):
    pass


class DimensionMismatchError(EnvironmentFileError):
    pass


class EmptyDomainError(ValueError):
    """An operator or semigroup was requested on an empty vertex set."""


class SingularSystemError(ArithmeticError):
    """The killed generator is not invertible on the requested domain."""


class NonConvergenceError(ArithmeticError):
    """An iterative eigensolver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class HoleMapInfeasibleError(RuntimeError):
    """A sub-box holds more hole vertices than giant-cluster vertices."""

    def __init__(self, message, subbox=None):
        super().__init__(message)
        self.subbox = subbox


class EmptyTimeChangeError(ValueError):
    """The additive functional vanishes identically, so no time change exists."""


class SizeError(MemoryError):
    """A computation would exceed the configured memory budget."""
