"""Exception hierarchy for the vgstar toolkit."""


class VgstarError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(VgstarError):
    """A specification object violates one of its invariants."""


class PackingInfeasible(VgstarError):
    """Hardcore thinning cannot reach the requested volume fraction."""


class InsufficientSamples(VgstarError):
    """A statistical estimate was requested with too few samples."""


class SingularPoint(VgstarError):
    """Green function evaluated at (or too close to) its singularity."""


class ScattererTooLarge(VgstarError):
    """Scatterer radius incompatible with the shortest wavelength."""


class InvalidTarget(VgstarError):
    """Point target placed on the probe line."""


class DimensionMismatch(VgstarError):
    """Inconsistent dimensions between data, probe and grid."""


class NotParaxial(VgstarError):
    """Point too far off-axis for the paraxial expansion."""


class NoPeakFound(VgstarError):
    """No local maximum near the requested location."""


class OutOfDomain(VgstarError):
    """Requested pixel falls outside the imageable region."""


class TooFewShifts(VgstarError):
    """Spatial-variance estimate needs at least two shifts."""


class EmptyTrace(VgstarError):
    """Amplitude estimate called on an empty trace."""


class CorruptFile(VgstarError):
    """Binary data file has a bad magic number or truncated payload."""
