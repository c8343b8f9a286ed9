"""Exception types shared across the package."""


class SegparseError(Exception):
    """Base class for all package errors."""


class MalformedMr(SegparseError, ValueError):
    """A FunQL string could not be parsed against the signature table."""


class MrTypeError(SegparseError, TypeError):
    """A FunQL tree violates the argument types in the signature table."""


class TargetNotFound(SegparseError, LookupError):
    pass


class CompositionError(SegparseError):
    pass


class GrammarError(SegparseError):
    pass


class SplitError(SegparseError):
    pass


class MarkerMismatch(SegparseError, ValueError):
    pass


class IoError(SegparseError, OSError):
    pass


class DivergenceError(SegparseError, FloatingPointError):
    """Training loss became non-finite."""

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage


class LengthMismatch(SegparseError, ValueError):
    pass


class CheckpointError(SegparseError):
    pass
