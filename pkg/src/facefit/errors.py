"""Exception hierarchy shared across the package."""


class FaceFitError(Exception):
    """Base class; ``category`` is the CLI error category."""

    category = "internal"


class DimensionMismatch(FaceFitError, ValueError):
    category = "dimension"


class ModelFormatError(FaceFitError, ValueError):
    category = "format"


class MalformedHeader(ModelFormatError):
    pass


class TruncatedPayload(ModelFormatError):
    pass


class InconsistentDimensions(ModelFormatError):
    pass


class DegenerateLandmarks(FaceFitError, ValueError):
    category = "degenerate"


class SingularTransform(FaceFitError, ValueError):
    category = "degenerate"


class NonFiniteLoss(FaceFitError, FloatingPointError):
    category = "numeric"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ManifestError(FaceFitError, ValueError):
    category = "manifest"
