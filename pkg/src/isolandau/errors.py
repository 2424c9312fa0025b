"""Exception types shared across the package."""


class IsolandauError(Exception):
    """Base class for all package-specific errors."""


class GridMismatchError(IsolandauError):
    """Fields defined on different grids were combined."""


class GridTooLarge(IsolandauError):
    """A quadratic-cost routine was asked to run on too many nodes."""


class ZeroMassError(IsolandauError):
    """A density with non-positive total mass was passed where mass > 0 is required."""


class NonConvergence(IsolandauError):
    """An iterative solve failed to reach its tolerance within the iteration budget."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class EntropyViolation(IsolandauError):
    """The per-step entropy dissipation inequality failed beyond the allowed slack."""

    def __init__(self, message, lhs=None, rhs=None, slack=None):
        super().__init__(message)
        self.lhs = lhs
        self.rhs = rhs
        self.slack = slack


class CubeTooSmall(IsolandauError):
    """A sub-cube covering was requested with cubes under two cells across."""


class ExponentOverflow(IsolandauError):
    """An iterated-moment exponent exceeded what float64 can represent."""

    def __init__(self, message, largest_valid_n=None, partial=None):
        super().__init__(message)
        self.largest_valid_n = largest_valid_n
        self.partial = partial


class ConfigError(IsolandauError):
    """A run configuration file failed to parse or validate."""


class CorruptSnapshot(IsolandauError):
    """A snapshot file failed its checksum or consistency checks."""
