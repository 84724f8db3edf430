"""Exception hierarchy shared across the package.

Two families matter for callers: configuration problems (bad specs,
dimension mismatches, under-determined inputs) and numerical failures
(fit non-convergence, inconsistent interference data). The CLI maps the
former to exit code 2 and the latter to exit code 3.
"""


class ConfigurationError(ValueError):
    """Invalid spec, dimension mismatch, or violated precondition."""


class CapacityError(ConfigurationError):
    """Problem size exceeds what the exact algorithms support."""


class UnderdeterminedError(ConfigurationError):
    """Not enough independent data to reconstruct the requested rows."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


class FitError(NumericalError):
    """Curve fit did not converge within the iteration budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InconsistentDataError(NumericalError):
    """Measured interference data violate the model beyond tolerance."""


class UndefinedVisibilityError(ValueError):
    """HOM visibility is undefined because the dip plateau vanishes."""
