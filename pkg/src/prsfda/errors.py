"""Exception hierarchy shared across the package."""


class PrsfdaError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PrsfdaError):
    """Numeric input violates a precondition (non-finite, out of range)."""


class ShapeError(PrsfdaError):
    """Array extents do not match what the operation requires."""


class ConfigError(PrsfdaError):
    """A configuration value is missing, unknown, or out of range."""


class SpecError(ConfigError):
    """A benchmark spec is infeasible (e.g. negative class frequency)."""


class LabelError(PrsfdaError):
    """A label map contains a class id outside [0, C)."""


class MaskError(PrsfdaError):
    """A mask that must be binary contains other values."""


class ScheduleError(PrsfdaError):
    """A learning-rate schedule was queried outside its valid range."""


class TrainingError(PrsfdaError):
    """Training diverged (non-finite loss or gradients)."""


class NoSignalError(TrainingError):
    """A training phase was configured so that no pixel contributes loss."""


class OracleFailureError(PrsfdaError):
    """The finite-difference oracle hit a non-finite function value."""


class FormatError(PrsfdaError):
    """A serialized file has a corrupt header or magic string."""


class TruncatedPayloadError(PrsfdaError):
    """A serialized file ended before its declared payload."""


class RoleError(PrsfdaError):
    """A dataset file was loaded under the wrong domain role."""


class MissingLabelsError(PrsfdaError):
    """An operation needing labels was given a label-free dataset."""


class EmptyEvaluationError(PrsfdaError):
    """No class had any pixel in either prediction or ground truth."""


class PartialResultsError(PrsfdaError):
    """An ablation arm failed; carries the arms that did complete."""

    def __init__(self, message, completed):
        super().__init__(f"{message} (completed arms: {', '.join(completed) or 'none'})")
        self.completed = list(completed)
