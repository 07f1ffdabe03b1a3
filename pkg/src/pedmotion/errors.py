"""Exception types shared across the package."""


class PedMotionError(Exception):
    """Base class for all package errors."""


class DegeneratePose(PedMotionError):
    """Too few valid keypoints, or a bounding box too small to normalize by."""


class NonFinite(PedMotionError):
    """A NaN or infinity showed up in a forward or backward pass.

    ``where`` names the timestep or parameter path. ``checkpoint`` holds the
    last good parameters when training aborted.
    """

    def __init__(self, message, where=None, checkpoint=None):
        super().__init__(message)
        self.where = where
        self.checkpoint = checkpoint


class InsufficientData(PedMotionError):
    pass


class ParseError(PedMotionError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateFrame(ParseError):
    pass


class ChecksumMismatch(PedMotionError):
    pass


class VersionUnsupported(PedMotionError):
    pass


class LengthMismatch(PedMotionError):
    pass


class EmptyMatrix(PedMotionError):
    pass
