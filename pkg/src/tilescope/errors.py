"""Exception types raised across the package."""


class TilescopeError(Exception):
    pass


# image I/O and pixel ops
class UnsupportedFormat(TilescopeError, ValueError):
    pass


class CorruptFile(TilescopeError, ValueError):
    pass


class ZeroDimension(TilescopeError, ValueError):
    pass


class IoFailure(TilescopeError, OSError):
    pass


class InvalidDimensions(TilescopeError, ValueError):
    pass


class IdealLowPassUnsupported(TilescopeError, ValueError):
    pass


class OutOfBounds(TilescopeError, IndexError):
    pass


class WrongChannelCount(TilescopeError, ValueError):
    pass


# spectral
class PartitionMismatch(TilescopeError, ValueError):
    pass


class EmptySet(TilescopeError, ValueError):
    pass


class ImageTooSmall(TilescopeError, ValueError):
    pass


# tiling / augmentation
class ImageSmallerThanTile(TilescopeError, ValueError):
    pass


class DegenerateOutput(TilescopeError, ValueError):
    pass


class DimensionMismatch(TilescopeError, ValueError):
    pass


class IndivisibleDimensions(TilescopeError, ValueError):
    pass


# model / training
class ShapeMismatch(TilescopeError, ValueError):
    pass


class EmptySequence(TilescopeError, ValueError):
    pass


class EmptyCorpus(TilescopeError, ValueError):
    pass


class NonFiniteLoss(TilescopeError, ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
