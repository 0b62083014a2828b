"""Exception hierarchy shared by every driftlab module."""


class DriftlabError(Exception):
    """Base class for all library errors."""


class ShapeError(DriftlabError, ValueError):
    pass


class LabelError(DriftlabError, ValueError):
    pass


class UsageError(DriftlabError, ValueError):
    pass


class NumericError(DriftlabError, ArithmeticError):
    pass


class FormatError(DriftlabError, ValueError):
    """Malformed binary input; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class GenerationError(DriftlabError, ValueError):
    pass


class AdaptationError(DriftlabError, RuntimeError):
    pass


class CheckpointError(DriftlabError):
    pass


class IntegrityError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
