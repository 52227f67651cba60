"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 3 and ``NumericError`` subclasses
to exit code 4.
"""


class BrailleSpeechError(Exception):
    pass


class DataError(BrailleSpeechError):
    pass


class NumericError(BrailleSpeechError):
    pass


# braille codec
class UnknownSyllablePart(DataError):
    pass


class UnknownPunct(DataError):
    pass


class UnknownCell(DataError):
    pass


class AmbiguousDecoding(DataError):
    pass


class StyleInvalid(DataError):
    pass


class NoDotsDetected(DataError):
    pass


class UnknownToken(DataError):
    pass


class IoFailure(DataError):
    pass


# tensor core
class ShapeMismatch(NumericError):
    pass


class UnknownOp(NumericError):
    pass


class NotScalarLoss(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


# training
class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericError):
    pass


class NonSquare(NumericError):
    pass


# retrieval
class EmptyCandidates(DataError):
    pass


class KOutOfRange(DataError):
    pass


class MissingGroundTruth(DataError):
    pass


# dsp
class EmptyWaveform(DataError):
    pass


class AllUnvoiced(DataError):
    pass


class NonFiniteInput(NumericError):
    pass


class UnknownPhoneme(DataError):
    pass


class EmptyInput(DataError):
    pass


class BadHeader(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


# acoustic model
class AllZeroDurations(DataError):
    pass


class MaskMismatch(DataError):
    pass


# pipeline
class CheckpointMismatch(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


class ConfigError(DataError):
    pass


# evaluation
class ZeroLength(DataError):
    pass


class NoRatings(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptyBank(DataError):
    pass


class MissingArtifacts(DataError):
    pass
