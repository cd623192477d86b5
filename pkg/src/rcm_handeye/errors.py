"""Exception hierarchy shared by every module."""


class HandEyeError(Exception):
    """Base class for all errors raised by rcm_handeye."""


class DegenerateRotation6D(HandEyeError):
    pass


class NonPositiveDt(HandEyeError):
    pass


class BehindCamera(HandEyeError):
    pass


class EmptyWindow(HandEyeError):
    pass


class InsufficientPairs(HandEyeError):
    pass


class NonPositiveStep(HandEyeError):
    pass


class DimensionMismatch(HandEyeError):
    pass


class EmptyDataset(HandEyeError):
    pass


class NonFiniteLoss(HandEyeError):
    """Raised when the objective becomes NaN/inf during optimisation."""

    def __init__(self, message, epoch=None, window=None):
        super().__init__(message)
        self.epoch = epoch
        self.window = window


class ConfigInvalid(HandEyeError):
    pass


class FrustumViolation(HandEyeError):
    pass


class OutOfRange(HandEyeError):
    pass


class SchemaError(HandEyeError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonOrthonormalRotation(SchemaError):
    pass
