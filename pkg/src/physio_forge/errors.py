"""Exception hierarchy shared across the package."""


class PhysioForgeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PhysioForgeError, ValueError):
    pass


class ParameterError(PhysioForgeError, ValueError):
    pass


class ClassIndexError(PhysioForgeError, IndexError):
    pass


class DegenerateBatchError(PhysioForgeError, ValueError):
    pass


class RankError(PhysioForgeError, ValueError):
    pass


class MetricUndefinedError(PhysioForgeError, ValueError):
    """Raised when a threshold metric is requested on a single-class score set."""


class ScheduleError(PhysioForgeError, ValueError):
    pass


class FormatError(PhysioForgeError):
    """A binary map or checkpoint file is malformed."""


class ManifestError(PhysioForgeError):
    """A manifest is missing, unparsable, or references missing files."""


class NumericalError(PhysioForgeError, FloatingPointError):
    """A loss or gradient became non-finite during training."""
