"""Exception types raised across the toolkit."""


class VidpaceError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(VidpaceError, ValueError):
    pass


class DataError(VidpaceError):
    pass


class DecodeError(DataError):
    pass


class EmptyVideoError(DataError):
    pass


class MissingSplitError(DataError):
    pass


class EmptySplit(DataError):
    pass


class InvalidSpec(VidpaceError, ValueError):
    pass


class UnsupportedTupleSize(VidpaceError, ValueError):
    pass


class InvalidPermutation(VidpaceError, ValueError):
    pass


class LabelOutOfRange(VidpaceError, ValueError):
    pass


class UnknownSpeed(VidpaceError, ValueError):
    pass


class IndivisibleError(VidpaceError, ValueError):
    pass


class ShapeMismatch(VidpaceError, ValueError):
    pass


class ArityMismatch(VidpaceError, ValueError):
    pass


class ArchMismatch(VidpaceError):
    pass


class EmptyIndex(VidpaceError):
    pass
