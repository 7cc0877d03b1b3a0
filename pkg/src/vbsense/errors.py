"""Exception types raised across the package.

Each class maps to one failure category; the CLI turns them into exit codes.
"""


class VbsenseError(Exception):
    """Base class for all package errors."""


class DomainError(VbsenseError, ValueError):
    """An argument lies outside the domain of a physical formula."""


class BracketError(VbsenseError):
    """A root finder could not bracket the requested value.

    ``bound`` holds the largest attainable value on the bracket.
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class CalibrationError(VbsenseError):
    """Calibration anchors or a calibration curve are inconsistent."""


class ConfigError(VbsenseError):
    """Unknown key or malformed value in a configuration file."""


class SequenceError(VbsenseError):
    """Malformed pulse sequence or sweep descriptor."""


class FitError(VbsenseError):
    """A fit could not be set up (not raised for plain non-convergence)."""


class RankDeficiencyError(FitError):
    """The model parameters are not identifiable from the data."""


class AliasingError(FitError):
    """Sampling is too coarse for the oscillation being fitted."""


class EmptySelectionError(VbsenseError):
    """A frequency band selected no data points."""


class UndefinedRatioError(VbsenseError, ZeroDivisionError):
    """A ratio estimator was given a zero reference."""
