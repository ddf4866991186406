"""Exception types raised across the package."""


class XbarError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(XbarError, ValueError):
    pass


class InvalidInputError(XbarError, ValueError):
    pass


class InvalidStateError(XbarError, ValueError):
    pass


class ForwardStateError(XbarError, RuntimeError):
    """Backward pass requested without a cached forward pass."""


class IdxFormatError(XbarError, ValueError):
    pass


class IdxLengthError(XbarError, ValueError):
    pass


class ConsistencyError(XbarError, ValueError):
    pass


class BoundsError(XbarError, ValueError):
    pass


class GroupingError(XbarError, ValueError):
    pass


class CheckpointError(XbarError, ValueError):
    pass


class ConfigError(XbarError, ValueError):
    pass
