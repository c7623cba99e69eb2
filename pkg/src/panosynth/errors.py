"""Exception hierarchy shared across the package.

Every validation failure that can reach the CLI or the HTTP service maps
to one of these classes; the class name is the machine-readable error code.
"""


class PanosynthError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- scene validation ---

class UnknownCategory(PanosynthError):
    pass


class CenterOutOfRange(PanosynthError):
    pass


class SizeOutOfSet(PanosynthError):
    pass


class EmptyScene(PanosynthError):
    pass


class CanvasNotDivisible(PanosynthError):
    pass


class NegativeRange(PanosynthError):
    pass


# --- dataset ingestion ---

class MissingFile(PanosynthError):
    pass


class SchemaViolation(PanosynthError):
    pass


class CategoryMismatch(PanosynthError):
    pass


class BadConfig(PanosynthError):
    pass


# --- layout generation ---

class StuffObjectPassed(PanosynthError):
    pass


class ThingObjectPassed(PanosynthError):
    pass


class LengthMismatch(PanosynthError):
    pass


class ShapeMismatch(PanosynthError):
    pass


class EmptyActiveSet(PanosynthError):
    pass


class CategoryOutOfRange(PanosynthError):
    pass


class LatentDimMismatch(PanosynthError):
    pass


# --- training / evaluation ---

class NonFiniteLoss(PanosynthError):
    pass


class CheckpointMismatch(PanosynthError):
    pass


class IOFailure(PanosynthError):
    pass
