"""
Error types raised by the choreography toolkit.

Every error carries a machine-readable ``code`` so the command line can
report failures as JSON. Input-contract errors are also ``ValueError`` and
file errors are also ``OSError``, so callers that only know the builtin
hierarchy still catch them.
"""


class ChoreoError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


# posemath
class DegenerateRotation(ChoreoError, ValueError):
    """6D rotation whose columns are zero or parallel."""


class NotARotation(ChoreoError, ValueError):
    """Matrix that is not orthonormal."""


class BadLength(ChoreoError, ValueError):
    """Pose vector of the wrong length."""


# gradkernels
class ShapeMismatch(ChoreoError, ValueError):
    """Operand shapes are incompatible."""


class GraphConsumed(ChoreoError, RuntimeError):
    """Backward was run twice over the same recorded graph."""


# diffusion
class StepOutOfRange(ChoreoError, ValueError):
    """Diffusion step outside the schedule."""


class BadOverlap(ChoreoError, ValueError):
    """Stitching tail longer than a clip."""


# losses / audio / metrics
class TooShort(ChoreoError, ValueError):
    """Sequence or clip shorter than the operation requires."""


class BadBatch(ChoreoError, ValueError):
    """Empty or inconsistent batch."""


class TauNonPositive(ChoreoError, ValueError):
    """Contrastive temperature is not positive."""


class NoBeats(ChoreoError, ValueError):
    """No kinematic or music beats to align."""


class TooFew(ChoreoError, ValueError):
    """Too few feature vectors."""


class BadDistribution(ChoreoError, ValueError):
    """Probability row does not sum to one."""


class UnknownStyle(ChoreoError, KeyError):
    """Style without a reference set."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class BadAlpha(ChoreoError, ValueError):
    """CSAS decay parameter is not positive."""


# shapealign
class Diverged(ChoreoError, RuntimeError):
    """Optimisation objective kept increasing."""


class InsufficientKeypoints(ChoreoError, ValueError):
    """Fewer valid keypoints than the fit needs."""


# encoders / training
class BadCorpus(ChoreoError, ValueError):
    """Training corpus too small or malformed."""


class EmptyStyle(ChoreoError, ValueError):
    """Choreography style string is empty."""


# io
class BadMagic(ChoreoError, ValueError):
    """File does not start with the expected magic bytes."""


class Truncated(ChoreoError, ValueError):
    """Declared sizes disagree with the file length."""


class IoError(ChoreoError, OSError):
    """Reading or writing a file failed."""
