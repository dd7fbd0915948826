"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class UavTrackError(Exception):
    """Base class for all pipeline errors."""


# --- sensor io -------------------------------------------------------------

class MissingFile(UavTrackError, FileNotFoundError):
    pass


class MalformedRecord(UavTrackError, ValueError):
    """A record in a log file violates its format or invariants.

    ``index`` is the 0-based line number (text logs) or frame index (thermal).
    """

    def __init__(self, message: str, path=None, index: int | None = None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if index is not None:
            loc.append(f"record {index}")
        prefix = f"{': '.join(loc)}: " if loc else ""
        super().__init__(prefix + message)
        self.path = path
        self.index = index


class NonMonotonicTimestamps(UavTrackError, ValueError):
    def __init__(self, message: str, path=None, index: int | None = None):
        super().__init__(f"{path}: record {index}: {message}" if path is not None else message)
        self.path = path
        self.index = index


# --- numeric stages --------------------------------------------------------

class DegenerateSegment(UavTrackError, ValueError):
    pass


class EmptyFrame(UavTrackError, ValueError):
    pass


class DegenerateHistogram(UavTrackError, ValueError):
    pass


class NonPositiveDt(UavTrackError, ValueError):
    pass


class NumericalBreakdown(UavTrackError, ArithmeticError):
    pass


class TimeRegression(UavTrackError, ValueError):
    pass


class ZeroPixelLength(UavTrackError, ValueError):
    pass


# --- pipeline / evaluation -------------------------------------------------

class MissingCalibration(UavTrackError):
    pass


class MissingInput(UavTrackError):
    """A sensor branch was selected but its input stream is absent."""


class StageError(UavTrackError):
    """Wraps an error raised inside the pipeline fold with the frame timestamp."""

    def __init__(self, timestamp: float, cause: Exception):
        super().__init__(f"t={timestamp:.6f}s: {type(cause).__name__}: {cause}")
        self.timestamp = timestamp
        self.cause = cause


class OutOfRange(UavTrackError, ValueError):
    pass


class NoOverlap(UavTrackError, ValueError):
    pass


class InvalidSpec(UavTrackError, ValueError):
    pass


class ConfigError(UavTrackError, ValueError):
    """Invalid pipeline configuration; ``key`` is the dotted name at fault."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NoCoOccurrence(UavTrackError):
    """No frame window where a LIDAR target and a tracked box coexist."""
