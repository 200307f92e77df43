"""Exception hierarchy shared by the numerical modules.

The CLI maps these onto exit codes, so every module raises one of these
instead of bare ValueError/RuntimeError.
"""


class OrientationScoreError(Exception):
    """Base class for all errors raised by the processing package."""
    pass


class ParameterError(OrientationScoreError, ValueError):
    """Invalid parameter, dimension or stability setting."""
    pass


class FormatError(OrientationScoreError):
    """Malformed or inconsistent file on disk."""
    pass


class NumericError(OrientationScoreError):
    """A computation could not produce a meaningful result."""
    pass


class ProvenanceError(OrientationScoreError):
    """A score was paired with a bank it was not produced by."""
    pass


class StabilityError(NumericError, ParameterError):
    """Explicit time step above the stability bound of the scheme."""
    pass
