"""Exception types shared across the package."""


class AdvPipeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(AdvPipeError):
    """An array does not have the shape an operation requires."""


class TargetLengthMismatch(AdvPipeError):
    """A label string does not have exactly one character per cell."""


class UnknownSymbol(AdvPipeError):
    """A character is outside the recognizer alphabet."""


class NoInkFound(AdvPipeError):
    """The detector found no pixel below the ink threshold."""


class OutOfBounds(AdvPipeError):
    """A region does not lie fully inside the image it refers to."""


class TrainingDiverged(AdvPipeError):
    """Training loss became non-finite."""


class InvalidInitialization(AdvPipeError):
    """A decision-based attack was given a starting point that is not adversarial."""


class EmptyInput(AdvPipeError):
    """An aggregate was requested over zero items."""


class ConfigInvalid(AdvPipeError):
    """A configuration value violates its constraints."""


class GateFailed(AdvPipeError):
    """The recognizer did not reach the held-out accuracy gate."""


class IOFailure(AdvPipeError):
    """Reading or writing an artifact file failed."""
