"""Exception types shared across the engine."""


class ConvadError(Exception):
    """Base class for all engine errors."""


class ShapeMismatchError(ConvadError):
    """Raised when tensor shapes are inconsistent with an operation.

    Carries the offending dimension description so callers can report
    exactly which axis failed validation.
    """

    def __init__(self, message: str, *, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class GeometryError(ConvadError):
    """Invalid convolution/pooling window geometry."""


class ModelFormatError(ConvadError):
    """Manifest or weight blob violates the on-disk schema.

    ``location`` identifies the layer index, blob name, or file offset
    at which the violation was detected.
    """

    def __init__(self, message: str, *, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class MaskError(ConvadError):
    """Occlusion mask is malformed or does not match its tensor."""
