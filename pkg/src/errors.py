"""
Exception hierarchy for restobench
Every error carries the exit code the command line reports for it
"""


class RestobenchError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 2


class UsageError(RestobenchError):
    """Bad flags, unknown presets or invalid experiment configs"""
    exit_code = 1


class DataError(RestobenchError):
    """Input data that cannot be processed"""
    exit_code = 2


class AdapterError(RestobenchError):
    """An enhancer failed to produce restored audio"""
    exit_code = 3


class AudioFormatError(DataError):
    pass


class SignalTooShortError(DataError):
    def __init__(self, message="signal too short"):
        super().__init__(message)


class ReconstructionError(DataError):
    def __init__(self, message="window/hop violates reconstruction condition"):
        super().__init__(message)


class InvalidCutoffError(DataError):
    def __init__(self, message="invalid cutoff"):
        super().__init__(message)


class DegenerateReferenceError(DataError):
    def __init__(self, message="degenerate SNR reference"):
        super().__init__(message)


class InvalidRegionError(DataError):
    def __init__(self, message="invalid region list"):
        super().__init__(message)


class SpecError(DataError):
    """A degradation spec document that does not validate"""


class InsufficientSpeechError(DataError):
    def __init__(self, message="insufficient speech for STOI"):
        super().__init__(message)


class SilentReferenceError(DataError):
    def __init__(self, message="silent reference"):
        super().__init__(message)


class LengthMismatchError(DataError):
    def __init__(self, message="length mismatch"):
        super().__init__(message)


class IncomparableReportsError(DataError):
    def __init__(self, message="incomparable reports"):
        super().__init__(message)


class NoAnchorSamplesError(DataError):
    def __init__(self, message="no anchor samples"):
        super().__init__(message)


class WeightMismatchError(DataError):
    def __init__(self, message="weight/layer count mismatch"):
        super().__init__(message)


class UnalignedStreamsError(DataError):
    def __init__(self, message="unaligned feature streams"):
        super().__init__(message)


class NoInputItemsError(DataError):
    def __init__(self, message="no input items"):
        super().__init__(message)


class FeatureFileError(DataError):
    """A FEAT1 file that cannot be decoded; `code` tells the failures apart"""
    code = "feature_file"


class BadMagicError(FeatureFileError):
    code = "bad_magic"

    def __init__(self, message="not a FEAT1 file"):
        super().__init__(message)


class DimensionOverflowError(FeatureFileError):
    code = "dimension_overflow"


class TruncatedFeatureFileError(FeatureFileError):
    code = "truncated"

    def __init__(self, message="truncated feature file"):
        super().__init__(message)
