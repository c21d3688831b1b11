"""Exception types shared across the package.

Validation problems (bad input data, bad configuration) derive from
``ValidationError``; failures of the numerical procedures themselves derive
from ``NumericalError``.  The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""


class PanelHdError(Exception):
    """Base class for all panelhd errors."""


class ValidationError(PanelHdError):
    """Invalid input data or configuration."""


class NumericalError(PanelHdError):
    """A numerical procedure failed on otherwise valid input."""


# --- data ingestion / transforms ---

class UnbalancedPanel(ValidationError):
    """Some (unit, time) cell is missing from the panel."""


class DuplicateKey(ValidationError):
    """The same (unit, time) pair appears more than once."""


class NonNumericCell(ValidationError):
    """A value column contains a non-numeric entry."""


class AlreadyTransformed(ValidationError):
    """The requested transform was already applied to this dataset."""


class ZeroVariance(ValidationError):
    """A column has zero pooled variance and cannot be standardized."""

    def __init__(self, name):
        super().__init__(f"column {name!r} has zero pooled variance")
        self.name = name


class DimensionMismatch(ValidationError):
    """Array shapes are inconsistent with the dataset."""


# --- numerical failures ---

class DegenerateColumn(NumericalError):
    """A regressor is (numerically) an exact linear combination of the rest."""


class BandwidthTooLarge(ValidationError):
    """Kernel bandwidth is not smaller than the sample length."""


class SvdFailure(NumericalError):
    """Singular value decomposition did not converge."""


class SingularDJ(NumericalError):
    """The projected design matrix D(Lambda) is numerically singular."""


class SingularSigmaJ(NumericalError):
    """The plug-in covariance of the active set is not positive definite."""


class NonPositiveVariance(NumericalError):
    """The variance quadratic form is not positive along the requested contrast."""


class ConstantResidualSeries(ValidationError):
    """A residual series is constant; correlations are undefined."""
