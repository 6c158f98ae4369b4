"""Exception hierarchy shared by every stage of the pipeline."""


class ParklotError(Exception):
    """Base class for all errors raised by parklot."""


class FormatError(ParklotError, ValueError):
    """Malformed binary or text input (bad magic, truncated data, ...)."""


class GeoreferencingError(ParklotError, ValueError):
    pass


class UnsupportedFeatureError(ParklotError, ValueError):
    pass


class IncompatibleGridError(ParklotError, ValueError):
    pass


class AlignmentError(ParklotError, ValueError):
    pass


class EmptyWindowError(ParklotError, ValueError):
    pass


class UnsupportedShapeError(ParklotError, ValueError):
    pass


class ConsistencyError(ParklotError, ValueError):
    pass


class FieldError(ParklotError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class IncompatibleCrsError(ParklotError, ValueError):
    pass


class SchemaError(ParklotError, ValueError):
    pass


class LabelError(ParklotError, ValueError):
    pass


class DimensionMismatchError(ParklotError, ValueError):
    pass


class DetectionsFormatError(SchemaError):
    """Bad record in a detections JSON-lines file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
