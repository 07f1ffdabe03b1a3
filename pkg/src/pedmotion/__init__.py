"""Pedestrian motion state (walking / standing) from 2D pose sequences."""
from .errors import (
    ChecksumMismatch,
    DegeneratePose,
    DuplicateFrame,
    EmptyMatrix,
    InsufficientData,
    LengthMismatch,
    NonFinite,
    ParseError,
    PedMotionError,
    VersionUnsupported,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ChecksumMismatch",
    "DegeneratePose",
    "DuplicateFrame",
    "EmptyMatrix",
    "InsufficientData",
    "LengthMismatch",
    "NonFinite",
    "ParseError",
    "PedMotionError",
    "VersionUnsupported",
    "__version__",
]
