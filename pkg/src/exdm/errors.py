"""Exception hierarchy. Every error raised by the package derives from ExdmError."""


class ExdmError(Exception):
    pass


# maze / environment
class NonRectangular(ExdmError, ValueError):
    pass


class NoStart(ExdmError, ValueError):
    pass


class UnreachableFreeCell(ExdmError, ValueError):
    pass


class SteppedAfterDone(ExdmError, RuntimeError):
    pass


class GoalInsideWall(ExdmError, ValueError):
    pass


# replay
class DimMismatch(ExdmError, ValueError):
    pass


class ModeMismatch(ExdmError, ValueError):
    pass


class BufferTooSmall(ExdmError, ValueError):
    pass


class PretrainModeHasNoRewards(ExdmError, ValueError):
    pass


# diffusion
class TOutOfRange(ExdmError, ValueError):
    pass


class EmptyBatch(ExdmError, ValueError):
    pass


class NonFiniteGuidanceGradient(ExdmError, FloatingPointError):
    pass


# fine-tuning
class KTooSmall(ExdmError, ValueError):
    pass


class NonFiniteGradient(ExdmError, FloatingPointError):
    pass


class NumericalOverflow(ExdmError, FloatingPointError):
    pass


class CheckpointMissing(ExdmError, FileNotFoundError):
    pass


# tabular lab
class SingularSystem(ExdmError, ValueError):
    pass


class TooLarge(ExdmError, ValueError):
    pass


class PreconditionUnmet(ExdmError, ValueError):
    pass


class DidNotConverge(ExdmError, RuntimeError):
    pass


# metrics
class PointOutOfBounds(ExdmError, ValueError):
    pass


class TooFewRuns(ExdmError, ValueError):
    pass


# cli / config
class ConfigInvalid(ExdmError, ValueError):
    pass


class MissingArtifacts(ExdmError, FileNotFoundError):
    pass
