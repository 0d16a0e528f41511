"""Exception types shared across the package.

Every error raised on purpose derives from :class:`OodevalError`, so callers
(and the CLI) can catch one base class.  Built-in ``IndexError``/``OSError``
are used where Python already has the right name for the failure.
"""


class OodevalError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(OodevalError):
    """A file's structure does not match the documented format."""


class UnsupportedDtypeError(FormatError):
    """Array file declares a dtype outside the supported set."""


class TruncationError(FormatError):
    """A file ends before its declared payload does."""


class ValidationError(OodevalError):
    """Input values violate a documented precondition (e.g. non-finite)."""


class UnsupportedImageError(OodevalError):
    """Image file is not an 8-bit RGB PNG."""


class ManifestError(OodevalError):
    """Dataset manifest is malformed (bad schema, duplicate ids, ...)."""


class MissingFileError(OodevalError):
    """A path referenced by a manifest does not exist."""


class ModeError(OodevalError):
    """A detector received probabilities of the wrong kind."""


class ShapeError(OodevalError):
    """Array dimensions are incompatible with the operation."""


class ConfigError(OodevalError):
    """An option or parameter is missing or outside its valid range."""


class FitError(OodevalError):
    """A model cannot be fitted on the given data."""


class InsufficientSamplesError(OodevalError):
    """An estimator needs more samples than were provided."""


class DegenerateLabelsError(OodevalError):
    """Label vector contains only one class; ranking metrics are undefined."""


class AlignmentError(OodevalError):
    """Score and label inputs cannot be aligned by id."""
