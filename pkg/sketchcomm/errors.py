"""
Error Types
Every error raised by sketchcomm derives from SketchCommError.
"""

from typing import Dict, Optional


class SketchCommError(Exception):
    """Base class for all sketchcomm errors."""


class DimensionError(SketchCommError, ValueError):
    """Shapes disagree, an input is empty, or a block leaves its extent."""


class DivisibilityError(DimensionError):
    """A grid dimension does not divide the problem dimension it splits."""

    def __init__(self, message: str, suggestion: Optional[str] = None):
        self.suggestion = suggestion
        if suggestion:
            message = f"{message}; {suggestion}"
        super().__init__(message)


class MatrixFormatError(DimensionError):
    """A matrix or point file could not be parsed."""

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")


class ConfigError(SketchCommError, ValueError):
    """Invalid run configuration."""


class FabricError(SketchCommError):
    """A collective was misused (sizes, chunk counts, mismatched calls)."""


class FabricDeadlockError(FabricError):
    """Ranks are blocked on collectives that can never complete."""


class RankFailureError(FabricError):
    """One or more ranks of an SPMD run raised."""

    def __init__(self, failures: Dict[int, BaseException]):
        self.failures = dict(sorted(failures.items()))
        details = "; ".join(
            f"rank {rank}: {type(exc).__name__}: {exc}" for rank, exc in self.failures.items()
        )
        super().__init__(f"{len(self.failures)} rank(s) failed: {details}")


class VerificationError(SketchCommError):
    """A computed result disagrees with its serial oracle."""
