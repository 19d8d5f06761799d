"""Exception types shared across the toolkit."""


class VoxsegError(Exception):
    """Base class for all toolkit errors."""


class InputError(VoxsegError, ValueError):
    """A value violates a precondition (empty volume, non-finite data, ...)."""


class ShapeError(VoxsegError, ValueError):
    """Operand shapes are incompatible; the message lists both shapes."""


class FormatError(VoxsegError, ValueError):
    """A file header is malformed; the message names the offending field."""


class TruncationError(FormatError):
    """A payload does not hold the number of bytes its header promises."""


class ConfigError(VoxsegError, ValueError):
    """A configuration value is invalid for the requested operation."""


class RoiError(VoxsegError, ValueError):
    """A region-of-interest box is degenerate or outside the volume."""


class DomainError(VoxsegError, ValueError):
    """A loss input lies outside its mathematical domain."""


class EmptyMaskError(VoxsegError, ValueError):
    """An operation that needs foreground voxels received an empty mask."""


class TrainingError(VoxsegError, RuntimeError):
    """Optimization cannot continue (NaN gradient, mismatched state, ...)."""


class ContractError(VoxsegError, RuntimeError):
    """An internal API contract was violated by the caller."""
