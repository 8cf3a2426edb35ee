"""Exception hierarchy shared across the toolkit."""


class MotionForgeError(Exception):
    """Base class for all toolkit errors."""


class DegenerateRotation(MotionForgeError):
    """A 6D rotation block cannot be decoded (near-zero or parallel halves)."""


class NotARotation(MotionForgeError):
    """A matrix failed the orthonormality / determinant check."""


class EmptyClip(MotionForgeError):
    """An operation received a clip with no frames."""


class ClipTooShort(MotionForgeError):
    """A clip has fewer frames than the operation requires."""


class GoalFrameReached(MotionForgeError):
    """A joint's goal frame index is not in the future."""


class NoFutureFrames(MotionForgeError):
    """No frame after the current one to sample a pseudo-goal from."""


class NotUnitVector(MotionForgeError):
    """A heading vector is not unit-norm."""


class NoActiveJointForPelvisIntention(MotionForgeError):
    """All control joints inactive and no heading goal supplied."""


class ShapeMismatch(MotionForgeError):
    """Tensor shape does not match the model configuration."""


class NoRecordedGraph(MotionForgeError):
    """backward() called on a value with no recorded forward computation."""


class NonFiniteLoss(MotionForgeError):
    """Training loss became NaN or infinite."""


class TooFewSamples(MotionForgeError):
    """Not enough samples to fit the requested mixture."""


class SingularCovariance(MotionForgeError):
    """A mixture covariance stayed singular even after regularization."""


class UnknownStyle(MotionForgeError):
    """Style label not present in the style bank."""


class LengthMismatch(MotionForgeError):
    """Two sequences that must align have different lengths."""


class TooShort(MotionForgeError):
    """Sequence too short for a spectral metric."""


class InsufficientInitialPoses(MotionForgeError):
    """The initial-pose pool is smaller than the protocol requires."""


class SessionNotFound(MotionForgeError):
    """No live session with the given id."""


class UnknownCheckpoint(MotionForgeError):
    """Checkpoint reference could not be resolved."""


class ConfigError(MotionForgeError):
    """Invalid or inconsistent run configuration."""
