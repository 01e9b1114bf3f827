"""Exception hierarchy shared by all stages."""


class DualFitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DualFitError, ValueError):
    """Input violates a precondition (shape, label, parameter range)."""


class DimensionMismatchError(ValidationError):
    pass


class InvalidLabelError(ValidationError):
    def __init__(self, code: int, index: int):
        self.code = code
        self.index = index
        super().__init__(f"invalid parsing label {code} at pixel index {index}")


class FormatError(DualFitError, OSError):
    """A file exists but its contents cannot be decoded."""


class UnsupportedImageError(FormatError):
    pass


class CorruptImageError(FormatError):
    pass


class FlowFormatError(FormatError):
    pass


class SingularSystemError(ValidationError):
    pass


class UndeterminedSystemError(ValidationError):
    """A masked component has no Dirichlet boundary."""
