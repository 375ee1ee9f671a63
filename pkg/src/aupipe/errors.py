"""Exception types shared across the pipeline."""


class FormatError(ValueError):
    """A file does not follow its declared on-disk format."""


class TruncatedFileError(FormatError):
    """A binary payload is shorter than its header promises."""


class DomainError(ValueError):
    """A value lies outside the domain an operation accepts."""


class ShapeError(ValueError):
    """Array or list dimensions do not line up."""


class SplitError(ValueError):
    """Subject split sets overlap or fail to cover the data."""


class UnknownSubjectError(LookupError):
    pass


class CannotBalanceError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class OrderingError(ValueError):
    """Frames of a subject are not contiguous and ascending."""


class DegenerateClassError(ValueError):
    """Training data contains a single class."""


class TrainingDivergedError(FloatingPointError):
    pass


class EnsembleError(RuntimeError):
    pass


class EmptyEvaluationError(ValueError):
    pass


class ConfigError(ValueError):
    pass
