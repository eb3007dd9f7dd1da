"""Exception hierarchy shared by every stage of the estimator."""


class ThresholdAFTError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSubsetError(ThresholdAFTError, ValueError):
    """An index set is empty or refers to observations that do not exist."""


class SingularDesignError(ThresholdAFTError, ArithmeticError):
    """The weighted Gram matrix of a subset is numerically singular."""

    def __init__(self, message: str, subset_size: int | None = None):
        super().__init__(message)
        self.subset_size = subset_size


class InsufficientEventsError(ThresholdAFTError, ValueError):
    """Too few uncensored observations for the requested operation."""


class PenaltyDomainError(ThresholdAFTError, ValueError):
    """A penalty was evaluated at a negative argument or built with bad parameters."""


class NonconvexSubproblemError(ThresholdAFTError, ValueError):
    """A thresholding subproblem was requested below its convexity bound."""


class DegenerateWindowError(ThresholdAFTError, ValueError):
    """A refinement window has no admissible split point."""


class InvalidThresholdsError(ThresholdAFTError, ValueError):
    """Threshold values induce an empty or unfittable subgroup."""


class InfeasibleConfigError(ThresholdAFTError, ValueError):
    """No grid point of a tuning configuration can be run on the data."""


class DataFormatError(ThresholdAFTError, ValueError):
    """A dataset file is malformed; the message cites the offending line."""
