"""Exception types shared across the package."""


class CFFontError(Exception):
    """Base class for all errors raised by cffont."""


class ValidationError(CFFontError, ValueError):
    """Bad user input: arguments, config values, out-of-range parameters."""


class ShapeMismatchError(ValidationError):
    """Two arrays that must share a shape do not."""


class ImageFormatError(CFFontError, ValueError):
    """A PGM file or a binary artifact has a malformed header or payload."""


class DimensionMismatchError(CFFontError, ValueError):
    """A file is well-formed but its dimensions differ from what was expected."""


class NormalizationError(CFFontError, ValueError):
    """A histogram cannot be normalized because its total mass is zero."""


class ClusteringError(CFFontError, ValueError):
    """K-Medoids cannot produce the requested number of distinct medoids."""


class TrainingDivergedError(CFFontError, RuntimeError):
    """A loss became non-finite during optimization."""

    def __init__(self, iteration, stage=None):
        self.iteration = iteration
        self.stage = stage
        where = f" in stage {stage}" if stage is not None else ""
        super().__init__(f"non-finite loss at iteration {iteration}{where}")


class StageError(CFFontError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
