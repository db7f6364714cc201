"""Exception types shared across the package."""


class BlinkwildError(Exception):
    """Base class for package-specific failures."""


class ManifestError(BlinkwildError):
    """Manifest file is malformed."""


class SplitViolationError(ManifestError):
    """A source id appears in both the train and test split."""


class MissingAssetError(ManifestError):
    """A clip referenced by the manifest does not exist on disk."""


class AnnotationError(BlinkwildError):
    """An annotation record violates its geometric constraints."""


class NoVisibleEyeError(BlinkwildError):
    """Eye-region geometry was requested with neither eye visible."""


class TrackLostError(BlinkwildError):
    """Tracker region has left the frame entirely."""


class UndefinedCorrelationError(BlinkwildError):
    """Correlation of a zero vector is undefined."""


class DegenerateGeometryError(BlinkwildError):
    """Ground-truth eye centers coincide; the ME ratio is undefined."""


class InvalidDatasetError(BlinkwildError):
    """A training set does not contain both classes."""
