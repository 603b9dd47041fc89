"""Exception hierarchy shared by every stage of the pipeline."""


class S3Error(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(S3Error):
    """A document is missing a required field or carries an unexpected one."""


class GeometryError(S3Error):
    """Degenerate or inconsistent geometry (self-intersecting polygons, empty grids...)."""


class UnknownReferenceError(S3Error):
    """An identifier points at something that does not exist (room, qa id...)."""


class CapacityError(S3Error):
    """Objects could not be placed within the bounded number of retries."""


class NoPath(S3Error):
    """No collision-free route exists between two grid cells."""


class InsufficientDuration(S3Error):
    """Trajectory too short to host question timestamps."""


class AuditError(S3Error):
    """A generated QA pair violates temporal grounding or answer invariants."""


class ParseError(S3Error):
    """Text could not be decoded as JSON."""


class RangeError(S3Error):
    """A numeric field lies outside its permitted interval."""


class ClockError(S3Error):
    """Stream time went backwards."""


class AdapterError(S3Error):
    """A model adapter call failed (transport, timeout, malformed reply)."""


class FormatError(S3Error):
    """Scoring function applied to a QA pair of the wrong answer format."""
