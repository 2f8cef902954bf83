"""Exception hierarchy shared by every hyperflow module."""


class HyperflowError(Exception):
    """Base class for all errors raised by hyperflow."""


class FormatError(HyperflowError):
    """A file does not follow the expected layout (bad magic, bad header)."""


class TruncationError(FormatError):
    """A file is shorter or longer than its header declares."""


class DataError(HyperflowError, ValueError):
    """Values violate a domain invariant (negative, non-finite, out of range)."""


class DimensionError(HyperflowError, ValueError):
    """Array shapes or wavelength grids do not match."""


class InputError(HyperflowError, ValueError):
    """Arguments are inconsistent or empty."""


class FeasibilityError(HyperflowError, ValueError):
    """A construction cannot be satisfied within its bounds."""


class RankError(HyperflowError, ValueError):
    """More components were requested than the data rank allows."""


class DegenerateRowError(HyperflowError, ValueError):
    """A transmission row is constant and cannot be rescaled."""


class UsageError(HyperflowError):
    """An operation was called in the wrong state or with missing arguments."""


class StateError(HyperflowError):
    """Internal state is not ready for the requested operation."""


class TrainingError(HyperflowError):
    """Training data cannot produce a model."""


class IntegrityError(HyperflowError):
    """A benchmark stage produced different outputs across repetitions."""
