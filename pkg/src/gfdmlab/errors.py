"""Exception types shared across the package."""


class GfdmlabError(Exception):
    """Base class for all package-specific errors."""


# --- point cloud ---

class InfeasibleSpacing(GfdmlabError):
    """Geometry features are too small for the requested point spacing."""


class UnknownPoint(GfdmlabError):
    """A point id is not present in the cloud."""


class InterpolationFailure(GfdmlabError):
    """An inserted point could not be interpolated at any order."""


# --- stencils ---

class SingularStencil(GfdmlabError):
    """The exactness constraint system is rank-deficient for this neighborhood."""


class InsufficientNeighbors(GfdmlabError):
    """Fewer neighbors than monomials of the requested order."""


class MissingValue(GfdmlabError):
    """A stencil was applied to a value map lacking one of its neighbor ids."""


# --- flow solver ---

class DivergedIteration(GfdmlabError):
    """Iterative linear solve hit its iteration cap before the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CloudDegenerate(GfdmlabError):
    """The moving point cloud lost the resolution needed to keep stepping."""


class ZeroDenominator(GfdmlabError):
    """Coefficient normalization received a zero reference quantity."""


# --- benchmark case ---

class OutOfChannel(GfdmlabError):
    """Inflow profile evaluated outside the channel cross-section."""


class InvalidOverride(GfdmlabError):
    """A case override is outside sanity bounds."""


# --- ML ---

class EmptyDataset(GfdmlabError):
    """Fit called with no rows."""


class EmptyEnsemble(GfdmlabError):
    """Voting ensemble constructed with no members."""


class GridEmpty(GfdmlabError):
    """Grid search over an empty grid."""


class TooFewRows(GfdmlabError):
    """Not enough rows for the requested protocol."""


class LengthMismatch(GfdmlabError):
    """y_true and y_pred have different lengths."""


# --- conformal ---

class CalibrationTooSmall(GfdmlabError):
    """Calibration set too small for a finite interval at this alpha."""


class FeatureMismatch(GfdmlabError):
    """Feature vector does not match the model's feature space."""


# --- active learning ---

class NoPositiveRegion(GfdmlabError):
    """The learner has no class-1 leaf to extract a box from."""


class OracleFailure(GfdmlabError):
    """The simulation oracle failed for one sample."""


# --- campaign ---

class TooFewRecords(GfdmlabError):
    """Not enough valid records for the requested statistic."""


class NoValidRecords(GfdmlabError):
    """Dataset assembly found no valid records."""
