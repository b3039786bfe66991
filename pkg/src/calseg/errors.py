"""Exception taxonomy shared by the whole pipeline.

Every error a caller is expected to handle maps to one of these classes;
the CLI translates them into its stable exit codes.
"""


class CalsegError(Exception):
    """Base class for all calseg errors."""


class IoError(CalsegError):
    """File could not be read or written."""


class FormatError(CalsegError):
    """File exists but is not a valid container (magic, header, length)."""


class DataError(CalsegError):
    """Payload or computed values violate numeric invariants (NaN/Inf)."""


class ShapeError(CalsegError):
    """Array shapes are incompatible with the requested operation."""


class DegenerateInputError(CalsegError):
    """Input carries no usable signal (e.g. constant map for thresholding)."""


class PlacementError(CalsegError):
    """Requested synthetic neurons cannot be placed under the constraints."""


class ConfigError(CalsegError):
    """Configuration is invalid or internally inconsistent."""
