"""Exception types raised across the package."""


class GaitScoreError(Exception):
    """Base class for package errors."""


class DegenerateInputError(GaitScoreError, ValueError):
    """Input geometry cannot be normalized (e.g. zero torso length)."""


class SequenceTooShortError(GaitScoreError, ValueError):
    pass


class PoseFormatError(GaitScoreError, ValueError):
    """Malformed pose or detection file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NoParticipantError(GaitScoreError, LookupError):
    pass


class ShapeError(GaitScoreError, ValueError):
    pass


class CheckpointError(GaitScoreError, ValueError):
    """Unreadable checkpoint or model-spec hash mismatch."""
