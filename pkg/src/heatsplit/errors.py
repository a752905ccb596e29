"""Exception types shared across the heatsplit package."""


class HeatsplitError(Exception):
    """Base class for all heatsplit errors."""


# --- ingest -----------------------------------------------------------------

class FormatError(HeatsplitError):
    """Input file does not match the expected layout."""


class EmptyFile(HeatsplitError):
    """Input file contains no usable rows."""


class NoStations(HeatsplitError):
    """Station list is empty."""


class NoOverlap(HeatsplitError):
    """Meter and weather date ranges are disjoint."""


# --- preprocess -------------------------------------------------------------

class DegenerateSample(HeatsplitError):
    """Consumption sample has no variance (or fewer than two values)."""


# --- model ------------------------------------------------------------------

class BadSimplex(HeatsplitError):
    """Vector is not a valid probability simplex."""


class NonFinite(HeatsplitError):
    """A density evaluated to NaN or infinity (usually an invalid scale)."""


# --- infer ------------------------------------------------------------------

class TooFewObservations(HeatsplitError):
    """Not enough complete days to fit the model."""


class Diverged(HeatsplitError):
    """Objective became NaN during optimization."""


# --- disagg -----------------------------------------------------------------

class ScalingMismatch(HeatsplitError):
    """Fit result belongs to a different household than the series."""


class MissingFit(HeatsplitError):
    """Required fit artifact was not found."""


# --- analyze ----------------------------------------------------------------

class InsufficientColdDays(HeatsplitError):
    """Fewer than two cold days, or cold-day temperatures are constant."""


class TooSmallSample(HeatsplitError):
    """Sample too small for the goodness-of-fit test."""


class AllNonPositive(HeatsplitError):
    """No positive values available for the log branch."""


# --- validate ---------------------------------------------------------------

class EmptySide(HeatsplitError):
    """A/B split left one side without observations."""


class AllExcluded(HeatsplitError):
    """Every pair fell under the near-zero exclusion threshold."""


class AllFailed(HeatsplitError):
    """No household validated successfully."""
