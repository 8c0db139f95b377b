"""Exception hierarchy shared by every module."""


class RandNetError(Exception):
    """Base class for all library errors."""


class DimensionError(RandNetError, ValueError):
    pass


class SparsityError(RandNetError, ValueError):
    pass


class DegenerateDictionaryError(RandNetError, ValueError):
    """A dictionary column collapsed to (numerically) zero."""


class DivergenceError(RandNetError, FloatingPointError):
    """Non-finite values appeared during encoding or training.

    ``iteration`` names the FISTA iteration (encoder) or the epoch/batch
    (training) at which the problem was detected; ``checkpoint`` holds the
    last finite parameters when the training loop can provide them.
    """

    def __init__(self, message, iteration=None, checkpoint=None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


class ConsistencyError(RandNetError, ValueError):
    pass


class IDXFormatError(RandNetError, ValueError):
    pass


class TruncatedFileError(RandNetError, ValueError):
    pass


class RankError(RandNetError, ValueError):
    pass


class ConvergenceError(RandNetError, RuntimeError):
    pass


class SchemaError(RandNetError, ValueError):
    pass


class DependencyError(RandNetError, RuntimeError):
    pass
