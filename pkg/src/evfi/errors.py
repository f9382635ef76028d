"""Exception types raised across the package."""


class EvfiError(Exception):
    """Base class for all package errors."""


class OutOfBoundsEvent(EvfiError):
    pass


class NonFiniteTimestamp(EvfiError):
    pass


class DegenerateWindow(EvfiError):
    pass


class InvalidBoundaries(EvfiError):
    pass


class DegenerateTimestamps(EvfiError):
    pass


class EmptyScene(EvfiError):
    pass


class InvalidScene(EvfiError):
    pass


class ShapeMismatch(EvfiError, ValueError):
    pass


class InvalidConfig(EvfiError, ValueError):
    pass


class MissingGroundTruth(EvfiError):
    pass


class EmptySliceList(EvfiError):
    pass


class MissingCheckpoint(EvfiError):
    pass


class MissingDataset(EvfiError):
    pass


class NonFiniteLoss(EvfiError):
    pass


class TooFewFrames(EvfiError):
    pass


class TooFewTargets(EvfiError):
    pass


class MissingFile(EvfiError):
    pass


class CorruptEventFile(EvfiError):
    pass


class CorruptFlowFile(EvfiError):
    pass


class InvalidPolarity(EvfiError, ValueError):
    pass
