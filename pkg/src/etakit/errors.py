"""Exception hierarchy shared by all etakit modules.

Every error raised by the library derives from :class:`EtaKitError`, so
callers (notably the CLI) can distinguish library failures from bugs.
"""


class EtaKitError(Exception):
    """Base class for all etakit errors."""


class DimensionMismatch(EtaKitError):
    """An array's shape disagrees with the model or configured dimensions."""


class TooFewSamples(EtaKitError):
    """Not enough samples to fit the requested model."""


class InsufficientData(EtaKitError):
    """Accumulated statistics cover fewer frames than unknowns."""


class NonFinite(EtaKitError):
    """NaN or Inf encountered where finite values are required."""


# --- datastore -----------------------------------------------------------

class IoError(EtaKitError):
    """Filesystem-level read/write failure."""


class UnsupportedShape(EtaKitError):
    """Array rank outside the supported 1-D/2-D range."""


class MalformedHeader(EtaKitError):
    """Array file header is truncated, corrupt, or not an NPY v1.0 header."""


class UnsupportedDtype(EtaKitError):
    """Array file stores a dtype other than little-endian f32/f64."""


class ShapeRankError(EtaKitError):
    """Array file stores a rank the reader does not support."""


class DuplicateUttId(EtaKitError):
    """Two manifest entries share an utterance id."""


class MissingField(EtaKitError):
    """A manifest entry lacks a required field."""


class BadJson(EtaKitError):
    """A manifest line is not a valid JSON object of the expected schema."""


class SchemaVersionMismatch(EtaKitError):
    """A stored bundle uses an unknown schema version."""


class ShapeMismatch(EtaKitError):
    """Stored array shapes disagree with declared metadata."""


# --- baselines -----------------------------------------------------------

class TooFewPoints(EtaKitError):
    """Fewer points than requested clusters."""


# --- probe ---------------------------------------------------------------

class SingleClass(EtaKitError):
    """Training data contains only one class."""


class ClassTooSmall(EtaKitError):
    """A class has fewer members than the number of folds."""


class ZeroVariance(EtaKitError):
    """Paired differences are constant; the t statistic is undefined."""
