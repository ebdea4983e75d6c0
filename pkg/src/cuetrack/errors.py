"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: format/validation failures
exit 4, numeric failures exit 5, OS-level I/O failures exit 3.
"""


class CuetrackError(Exception):
    """Base class for all library errors."""


class ShapeError(CuetrackError):
    """Dimension or layout mismatch between arrays."""


class EmptyTextError(CuetrackError):
    """A text-dependent operation received zero valid text tokens."""


class ConfigError(CuetrackError):
    """Weights, grids, or options that cannot be combined."""


class NumericError(CuetrackError):
    """Non-finite values where finite ones are required."""


class TrainingError(CuetrackError):
    """Training diverged or could not proceed."""


class InputError(CuetrackError):
    """Invalid metric inputs (empty record lists, non-positive boxes)."""


class FormatError(CuetrackError):
    """Base class for binary file-format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Unsupported format version."""


class TruncatedPayloadError(FormatError):
    """File ends before the header-implied payload does."""


class NonFiniteValueError(FormatError):
    """Payload contains NaN or infinity."""


class LayoutError(FormatError):
    """Header fields are internally inconsistent with each other or the payload."""
