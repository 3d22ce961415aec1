"""Dense mid-level patch encoding against codebooks of scene representative
patches, for indoor scene recognition."""

from duca.errors import (
    ConvergenceError,
    DigestMismatchError,
    DucaError,
    FormatError,
    IntegrityError,
    InvalidInputError,
    MissingFeatureError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DigestMismatchError",
    "DucaError",
    "FormatError",
    "IntegrityError",
    "InvalidInputError",
    "MissingFeatureError",
]
