"""Exception hierarchy shared by all iphfit modules."""


class IphfitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(IphfitError):
    """Matrix input is non-finite, non-square or dimension-mismatched."""


class DomainError(IphfitError):
    """Argument outside the mathematical domain of the operation."""


class DegenerateError(IphfitError):
    """A required density or denominator is zero (or underflowed to zero)."""


class SimulationStall(IphfitError):
    """Path simulation exceeded the event cap without absorbing."""


class IdentifiabilityError(IphfitError):
    """Regression design matrix is rank deficient over the emitted cells."""


class NonConvergence(IphfitError):
    """Iterative fit hit the iteration cap; carries the last iterate."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class InvalidRate(IphfitError):
    """Uniformization rate below the minimum valid for the model."""


class SizeLimit(IphfitError):
    """Requested materialization exceeds the supported size guard."""
