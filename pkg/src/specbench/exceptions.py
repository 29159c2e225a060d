"""Exception hierarchy shared across the package."""


class SpecbenchError(Exception):
    """Base class for every error raised by specbench."""


class ValidationError(SpecbenchError, ValueError):
    """Input violates a documented precondition."""


class GridMismatchError(ValidationError):
    """Two objects that must share a wavelength grid do not."""


class FormatError(ValidationError):
    """A file could not be parsed."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class NonFiniteDataError(FormatError):
    pass


class DegenerateApertureError(ValidationError):
    """The aperture mask passes no light."""


class CalibrationError(SpecbenchError):
    pass


class TrainingError(SpecbenchError, RuntimeError):
    """Optimisation diverged; ``epoch`` is the epoch index where it happened."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
