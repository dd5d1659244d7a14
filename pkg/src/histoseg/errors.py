"""Exception types shared across the pipeline.

Every error raised by histoseg derives from HistosegError so callers can
catch pipeline failures without swallowing programming errors.
"""


class HistosegError(Exception):
    """Base class for all histoseg errors."""


class ConfigError(HistosegError):
    """Bad or missing configuration; message carries the config path."""


# mask decoding

class EmptyMask(HistosegError):
    pass


class MaskLargerThanImage(HistosegError):
    pass


# dataset exploration

class EmptyDataset(HistosegError):
    pass


class MismatchedPair(HistosegError):
    pass


class BadRatios(HistosegError):
    pass


class EmptyIds(HistosegError):
    pass


class TooSmall(HistosegError):
    pass


# preprocessing

class TargetSmaller(HistosegError):
    pass


class OverlappingSets(HistosegError):
    pass


class EmptyEval(HistosegError):
    pass


# network and training

class ShapeMismatch(HistosegError):
    pass


class BadConfig(HistosegError):
    pass


class NoTape(HistosegError):
    pass


class MissingGrad(HistosegError):
    pass


class NonFinite(HistosegError):
    pass


# metrics and reporting

class EmptyMatrix(HistosegError):
    pass


class EmptyValues(HistosegError):
    pass


class EmptyResults(HistosegError):
    pass


class MissingMetric(HistosegError):
    pass
