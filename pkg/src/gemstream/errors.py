"""Exception types raised across gemstream."""


class GemStreamError(Exception):
    """Base class for all gemstream errors."""


class DimensionMismatch(GemStreamError, ValueError):
    pass


class ZeroNormReference(GemStreamError, ValueError):
    pass


class NonConvergence(GemStreamError, RuntimeError):
    """Raised when the dual solver exhausts its iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EmptyBuffer(GemStreamError, ValueError):
    pass


class EmptyDataset(GemStreamError, ValueError):
    pass


class InvalidSpec(GemStreamError, ValueError):
    pass


class TooFewSamples(GemStreamError, ValueError):
    pass


class MissingImportance(GemStreamError, ValueError):
    pass


class ConfigError(GemStreamError, ValueError):
    pass
