"""Exception hierarchy shared by every module."""


class MPTSNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MPTSNetError, ValueError):
    pass


class ConfigError(MPTSNetError, ValueError):
    pass


class DataError(MPTSNetError, ValueError):
    pass


class FormatError(DataError):
    """Malformed input file (as opposed to well-formed but invalid content)."""


class UsageError(MPTSNetError, RuntimeError):
    pass


class CheckpointError(MPTSNetError, IOError):
    pass


class TrainingError(MPTSNetError, RuntimeError):
    pass
