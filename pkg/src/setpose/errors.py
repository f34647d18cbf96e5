"""Exception types shared across the package.

Every error raised by library code derives from SetPoseError so callers
(notably the CLI) can map failures onto exit codes in one place.
"""


class SetPoseError(Exception):
    """Base class for all setpose errors."""


class ConfigError(SetPoseError):
    """Invalid configuration value or unknown config key."""


class ShapeError(SetPoseError):
    """Array shape violates an operation's contract."""


class NonPositiveDepth(SetPoseError):
    """A UVD depth or camera-frame z is <= 0 where positivity is required."""


class DegeneratePose(SetPoseError):
    """Pose carries no usable scale information (all joints coincident)."""


class EmptySide(SetPoseError):
    """A per-side statistic was requested for a side with zero samples."""


class NonPositiveScale(SetPoseError):
    """Target hand scale must be > 0."""


class NonFinite(SetPoseError):
    """NaN or infinity where finite values are required."""


class InconsistentAssignment(SetPoseError):
    """Assignment does not match the prediction/ground-truth sizes."""


class NonFiniteLoss(SetPoseError):
    """Training loss became NaN/inf; carries the offending step if known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class KeyMismatch(SetPoseError):
    """Parameter and gradient (or moment) key sets differ."""


class FormatError(SetPoseError):
    """On-disk artifact has a bad magic, version, or truncated payload."""


class MissingScaleStats(SetPoseError):
    """Rescaling was requested but no scale statistics were supplied."""
