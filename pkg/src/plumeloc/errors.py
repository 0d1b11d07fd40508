"""Exception hierarchy shared by all plumeloc modules."""


class PlumelocError(Exception):
    """Base class for all errors raised by plumeloc."""


class ConfigError(PlumelocError):
    """Invalid configuration: bad grid sizes, split ratios, missing files, etc."""


class DomainError(PlumelocError):
    """Physically invalid argument (non-positive time, diffusivity, mass, ...)."""


class SingularityError(DomainError):
    """A detector coincides with a grid-cell center (zero standoff distance)."""


class ShapeError(PlumelocError):
    """Array dimensions inconsistent with the operation's contract."""


class TrainingError(PlumelocError):
    """Optimization diverged (NaN loss) or could not proceed."""


class DegenerateSampleError(PlumelocError):
    """A sample set has zero spread where spread is required (e.g. KDE)."""
