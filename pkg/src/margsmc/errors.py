"""Exception hierarchy shared across the package."""


class MargSmcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MargSmcError):
    """Array shapes are inconsistent with the declared model dimensions."""


class SingularCovariance(MargSmcError):
    """A covariance matrix that must be positive definite is not."""


class SingularStatistics(MargSmcError):
    """The Gram statistic chi1 is singular and cannot be inverted."""


class DegeneratePosterior(MargSmcError):
    """Statistics do not define a proper posterior (e.g. after aggressive
    forgetting or with degenerate data)."""


class InvalidForgettingFactor(MargSmcError):
    """Forgetting factor outside (0, 1]."""


class NumericalError(MargSmcError):
    """A numerical operation produced NaN/Inf or lost positive definiteness."""


class ParticleCollapse(MargSmcError):
    """All particle weights underflowed to zero.

    The ``diagnostics`` attribute carries a dict with the time index and
    weight summaries to aid debugging.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class AncestorDegeneracy(MargSmcError):
    """All ancestor-sampling weights are zero."""


class ReferenceBookkeepingError(MargSmcError):
    """Reference-trajectory suffix statistics were decremented past empty."""


class DomainError(MargSmcError):
    """Input outside the mathematical domain of a function."""


class ParseError(MargSmcError):
    """A data file could not be parsed; carries line/column context."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class FormatError(MargSmcError):
    """A data file parsed but violates a format requirement."""


class EmptyGrid(MargSmcError):
    """An evaluation grid contains no points."""


class ConfigError(MargSmcError):
    """An experiment configuration is invalid; message carries field paths."""
