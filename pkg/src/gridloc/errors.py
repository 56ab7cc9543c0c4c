"""Exception types shared across the package."""


class GridlocError(Exception):
    """Base class for every error raised deliberately by gridloc."""


class ConfigurationError(GridlocError, ValueError):
    """Invalid grid, box, sweep or run configuration."""


class InvalidBoxError(ConfigurationError):
    """Degenerate, inverted or non-finite bounding box."""


class DatasetError(GridlocError):
    """Base class for annotation and image loading failures."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class SchemaError(DatasetError):
    """Annotation file does not follow the COCO instances layout."""


class DanglingReferenceError(DatasetError):
    """An annotation points at an image id that is not in the index."""


class DimensionMismatchError(DatasetError):
    """Decoded image size differs from the size recorded in the index."""


class SamplingError(DatasetError):
    pass


class ManifestError(DatasetError):
    """Subset manifest is unreadable or does not match its annotation file."""


class BackendError(GridlocError):
    """Model backend failure that is neither transient nor an auth problem."""


class TransientBackendError(BackendError):
    """Retryable failure: network error, rate limiting, server error."""


class AuthenticationError(BackendError):
    """Credentials missing or rejected. Never retried."""


class CacheMissError(BackendError):
    """Replay backend found no cached response for a request digest."""


class RetriesExhaustedError(TransientBackendError):
    """All retry attempts failed; ``attempts`` holds one entry per try."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = list(attempts)


class UndefinedChangeError(GridlocError, ArithmeticError):
    """Relative change requested against a zero or undefined baseline."""
