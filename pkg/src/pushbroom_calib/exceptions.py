"""Exception types raised across the package."""


class PushbroomError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(PushbroomError, ValueError):
    """Input carries no usable signal (constant image, zero variance...)."""


class NumericalError(PushbroomError, ArithmeticError):
    """A factorization or solve failed even after regularization."""


class ExtrapolationError(PushbroomError, ValueError):
    """A time query fell outside the span covered by a trajectory."""


class DegeneracyError(PushbroomError, ValueError):
    """Point configuration does not determine the requested model."""


class FilterFailureError(PushbroomError, RuntimeError):
    """RANSAC could not find a model supported by enough matches."""


class RenderError(PushbroomError, RuntimeError):
    """The simulated sensor footprint left the scene texture.

    Attributes
    ----------
    line_index : int
        First offending line.
    """

    def __init__(self, message, line_index):
        super().__init__(message)
        self.line_index = line_index


class ConfigError(PushbroomError, ValueError):
    """Invalid or incomplete configuration file.

    Attributes
    ----------
    field : str
        Name of the offending field, ``section.key``.
    """

    def __init__(self, message, field):
        super().__init__(message)
        self.field = field
