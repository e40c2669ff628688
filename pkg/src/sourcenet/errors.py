"""Exception types shared across the package."""


class SourceNetError(Exception):
    """Base class for all package-specific errors."""


class ZeroTensor(SourceNetError):
    """Moment tensor (or its deviatoric part) has zero norm."""


class DegenerateTensor(SourceNetError):
    """Principal axes are not separable at the requested tolerance."""


class ParseError(SourceNetError):
    """A text input could not be parsed; message carries the line number."""


class InvariantError(SourceNetError):
    """A domain-type invariant is violated; message names the constraint."""


class NoRay(SourceNetError):
    """No ray connects source and receiver in the given model."""


class NoStations(SourceNetError):
    """All stations of an event were dropped as unreachable."""


class NoiseTooShort(SourceNetError):
    """Noise record shorter than the trace it should cover."""


class TooFewStations(SourceNetError):
    """Event has fewer stations than the configured floor."""


class TooShort(SourceNetError):
    """Input series too short for the requested operation."""


class FormatError(SourceNetError):
    """Binary container has a bad magic number or version."""


class TruncatedFile(SourceNetError):
    """Binary container ended mid-record; message carries the byte offset."""


class ShapeError(SourceNetError):
    """Tensor shapes incompatible with the requested operation."""


class AllMasked(SourceNetError):
    """Every station of an event is masked out."""


class NoTape(SourceNetError):
    """Backward pass requested without a recorded forward pass."""


class ConfigMismatch(SourceNetError):
    """Checkpoint and dataset/model configuration are incompatible."""


class EmptySplit(SourceNetError):
    """A train/val/test split received zero events."""


class NonFiniteLoss(SourceNetError):
    """Training aborted on a NaN or infinite loss."""


class DegenerateStat(UserWarning):
    """A scalar feature column has zero variance; std clamped to 1."""
