"""Exception hierarchy shared by all scoretrack modules."""


class ScoretrackError(Exception):
    """Base class for every error raised by this package."""


class ScoreParseError(ScoretrackError):
    """A score file could not be decoded."""


class ScoreValidationError(ScoretrackError, ValueError):
    """A score violates one of its invariants."""


class DatabaseError(ScoretrackError):
    """The score database could not be assembled (empty dir, duplicate ids)."""


class SimulationError(ScoretrackError, ValueError):
    """A performance script is inconsistent with the database."""


class UnsupportedAudioError(ScoretrackError, ValueError):
    """Audio input the front-end cannot handle (sample rate, width, channels)."""


class IndexFormatError(ScoretrackError):
    """A persisted fingerprint index is malformed or fails its checksum."""


class ReferenceExhausted(ScoretrackError):
    """An online aligner has consumed its whole reference sequence."""


class StreamOrderError(ScoretrackError, ValueError):
    """Timestamps in an input stream went backwards."""


class RecordError(ScoretrackError, ValueError):
    """A line-delimited record is malformed."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
