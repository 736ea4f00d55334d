"""Exception types shared across the package."""


class SpectrumMarketError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(SpectrumMarketError, ValueError):
    """A parameter is outside the range the model admits."""


class InstanceTooLargeError(SpectrumMarketError):
    """The exhaustive oracle was asked for an instance beyond desk scale."""


class NoConvergenceError(SpectrumMarketError):
    """An iterative search hit its iteration budget.

    The ``residual`` attribute carries the last observed worst-case
    relative clearing residual.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class LoopDetectedError(SpectrumMarketError):
    """The tie-resolution graph contains a cycle, so peeling cannot start.

    Cycles occur with probability zero when channel offsets come from
    continuous distributions; hitting one signals a degenerate instance.
    """

    def __init__(self, message: str, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class NegativeDemandError(SpectrumMarketError):
    """Leaf elimination produced a negative demand beyond tolerance."""


class ChecksumMismatchError(SpectrumMarketError):
    """The final edge of a component has inconsistent endpoint check-sums."""


class NegativeChecksumError(SpectrumMarketError):
    """Decided demand exceeds a provider's supply; inputs are inconsistent."""


class InfeasibleChecksumsError(SpectrumMarketError):
    """Tie resolution failed, typically because prices are not converged."""
