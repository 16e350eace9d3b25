"""Push-broom imagery rectification, tie-point matching and boresight calibration."""

from .exceptions import (
    ConfigError,
    DegeneracyError,
    DegenerateInputError,
    ExtrapolationError,
    FilterFailureError,
    NumericalError,
    PushbroomError,
    RenderError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegeneracyError",
    "DegenerateInputError",
    "ExtrapolationError",
    "FilterFailureError",
    "NumericalError",
    "PushbroomError",
    "RenderError",
    "__version__",
]
